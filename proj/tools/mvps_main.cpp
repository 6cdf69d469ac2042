// Placeholder until the pipeline front end lands.
int main() { return 0; }
