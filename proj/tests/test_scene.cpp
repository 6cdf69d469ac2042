#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "mvps/dataset.hpp"

using namespace mvps;
using namespace mvps::scene;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("shade: frontal light with net unit brdf") {
  Rng rng(1);
  Material m{kPi, 0, 32};  // albedo pi cancels the 1/pi lobe
  double v = shade_pixel({0, 0, 1}, {{0, 0, 1}, 1.0}, m, {0, 0, 1}, 0.0, rng);
  CHECK(v == 1.0);
}

TEST_CASE("shade: attached shadow clamps to zero") {
  Rng rng(1);
  Material m{kPi, 0, 32};
  CHECK(shade_pixel({0, 0, 1}, {{0, 0, -1}, 1.0}, m, {0, 0, 1}, 0.0, rng) == 0.0);
}

TEST_CASE("shade: oblique light, doubled intensity") {
  Rng rng(1);
  Material m{1.0, 0, 32};
  double s2 = std::sqrt(2.0) / 2.0;
  double v = shade_pixel({0, 0, 1}, {{0, s2, s2}, 2.0}, m, {0, 0, 1}, 0.0, rng);
  CHECK_THAT(v, Catch::Matchers::WithinAbs(2.0 / kPi * s2, 1e-12));
}

TEST_CASE("shade: non-unit normal is a contract error") {
  Rng rng(1);
  Material m{1.0, 0, 32};
  CHECK_THROWS_AS(shade_pixel({0, 0, 1.01}, {{0, 0, 1}, 1.0}, m, {0, 0, 1}, 0.0, rng),
                  ContractError);
}

TEST_CASE("shade: intensity over e*brdf reproduces the cosine factor") {
  Rng rng(9);
  Material m{0.7, 0, 32};
  for (int i = 0; i < 50; ++i) {
    Vec3 n = normalized({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.1, 1)});
    Vec3 l = normalized({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    double e = rng.uniform(0.5, 3.0);
    double v = shade_pixel(n, {l, e}, m, {0, 0, 1}, 0.0, rng);
    CHECK_THAT(v / (e * m.albedo / kPi),
               Catch::Matchers::WithinAbs(std::fmax(dot(n, l), 0.0), 1e-15));
  }
}

TEST_CASE("analytic shapes: sampled pairs respect the Lipschitz bound") {
  AnalyticShape shape = make_torus_dents_scene();
  Rng rng(42);
  Vec3 lo = shape.bound_lo(), hi = shape.bound_hi();
  for (int i = 0; i < 2000; ++i) {
    Vec3 p{rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y), rng.uniform(lo.z, hi.z)};
    Vec3 q{rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y), rng.uniform(lo.z, hi.z)};
    double lhs = std::fabs(shape.distance(p) - shape.distance(q));
    CHECK(lhs <= norm(p - q) + 1e-9);
  }
}

TEST_CASE("analytic shapes: gradient matches finite differences") {
  AnalyticShape shape = make_torus_dents_scene();
  Rng rng(7);
  Vec3 lo = shape.bound_lo(), hi = shape.bound_hi();
  double h = 1e-6;
  for (int i = 0; i < 500; ++i) {
    Vec3 p{rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y), rng.uniform(lo.z, hi.z)};
    Vec3 g = shape.sample(p).grad;
    for (int a = 0; a < 3; ++a) {
      Vec3 pp = p, pm = p;
      pp[a] += h;
      pm[a] -= h;
      double fd = (shape.distance(pp) - shape.distance(pm)) / (2 * h);
      CHECK_THAT(g[a], Catch::Matchers::WithinAbs(fd, 1e-5));
    }
  }
}

TEST_CASE("render: unit sphere seen from the -z axis") {
  AnalyticShape shape = make_sphere_scene(1.0);
  Camera cam = Camera::look_at({0, 0, -3}, {0, 0, 0}, {0, 1, 0}, 80, 65, 65);
  auto lights = make_light_spiral(3);
  ViewRender r = render_view(shape, cam, lights, 0.0, 5);
  int cx = 32, cy = 32;  // principal point lands on the integer center pixel
  REQUIRE(r.mask.at(cx, cy) == 1.0);
  CHECK_THAT(r.normal.at(cx, cy, 0), Catch::Matchers::WithinAbs(0.0, 1e-9));
  CHECK_THAT(r.normal.at(cx, cy, 1), Catch::Matchers::WithinAbs(0.0, 1e-9));
  CHECK_THAT(r.normal.at(cx, cy, 2), Catch::Matchers::WithinAbs(-1.0, 1e-9));
  CHECK_THAT(r.depth.at(cx, cy), Catch::Matchers::WithinAbs(2.0, 1e-4));
  CHECK(r.nonconverged == 0);
}

TEST_CASE("render: re-rendering with the same seed is bit-identical") {
  AnalyticShape shape = make_torus_dents_scene();
  Camera cam = Camera::look_at({2.0, 0.4, 0.7}, {0, 0, 0}, {0, 0, 1}, 60, 48, 48);
  auto lights = make_light_spiral(4);
  ViewRender a = render_view(shape, cam, lights, 0.05, 123);
  ViewRender b = render_view(shape, cam, lights, 0.05, 123);
  for (size_t k = 0; k < a.light_images.size(); ++k)
    CHECK(a.light_images[k].px == b.light_images[k].px);
  CHECK(a.depth.px == b.depth.px);
}

TEST_CASE("render: normals and depths sit on the zero level set") {
  AnalyticShape shape = make_torus_dents_scene();
  Camera cam = Camera::look_at({2.2, 0.3, 0.8}, {0, 0, 0}, {0, 0, 1}, 90, 96, 96);
  ViewRender r = render_view(shape, cam, make_light_spiral(1), 0.0, 2);
  std::vector<std::pair<int, int>> hits;
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x)
      if (r.mask.at(x, y) == 1.0) hits.push_back({x, y});
  REQUIRE(hits.size() > 500);
  Rng rng(77);
  double h = 1e-6;
  int checked = 0;
  for (int i = 0; i < 1000; ++i) {
    auto [x, y] = hits[rng.uniform_index(hits.size())];
    Vec3 p = cam.unproject(double(x), double(y), r.depth.at(x, y));
    CHECK(std::fabs(shape.distance(p)) <= 1e-4);
    // rendered normal vs normalized central-difference gradient
    Vec3 fd;
    for (int a = 0; a < 3; ++a) {
      Vec3 pp = p, pm = p;
      pp[a] += h;
      pm[a] -= h;
      fd[a] = shape.distance(pp) - shape.distance(pm);
    }
    fd = normalized(fd);
    Vec3 n{r.normal.at(x, y, 0), r.normal.at(x, y, 1), r.normal.at(x, y, 2)};
    double cosang = std::min(1.0, std::fabs(dot(n, fd)));
    CHECK(std::acos(cosang) <= 1e-3);
    ++checked;
  }
  CHECK(checked == 1000);
}

TEST_CASE("median: single image maps to itself") {
  Image a(2, 2, 1);
  a.at(0, 0) = 3;
  a.at(1, 1) = -1;
  Image m = median_image({a});
  CHECK(m.px == a.px);
}

TEST_CASE("median: odd and even counts") {
  auto img = [](double v) {
    Image i(1, 1, 1);
    i.at(0, 0) = v;
    return i;
  };
  CHECK(median_image({img(2), img(0), img(1)}).at(0, 0) == 1.0);
  CHECK(median_image({img(10), img(0), img(2), img(1)}).at(0, 0) == 1.5);
  CHECK_THROWS_AS(median_image({}), ContractError);
}

TEST_CASE("dataset: save/load round trip is lossless") {
  TempDir dir("mvps_ds_roundtrip");
  AnalyticShape shape = make_sphere_scene(0.5);
  auto cams = make_ring_cameras(2, 2.0, {10}, 40, 32, 32);
  MvpsDataset ds = render_dataset(shape, cams, make_light_spiral(4), 0.0, 9);
  save_dataset(dir.str(), ds);
  MvpsDataset first = load_dataset(dir.str());

  TempDir dir2("mvps_ds_roundtrip2");
  save_dataset(dir2.str(), first);
  MvpsDataset second = load_dataset(dir2.str());

  REQUIRE(second.num_views() == first.num_views());
  REQUIRE(second.num_lights() == first.num_lights());
  for (int v = 0; v < first.num_views(); ++v) {
    for (int k = 0; k < first.num_lights(); ++k)
      CHECK(second.views[v].light_images[k].px == first.views[v].light_images[k].px);
    CHECK(second.views[v].mask.px == first.views[v].mask.px);
    for (int i = 0; i < 9; ++i)
      CHECK(second.views[v].camera.K.m[i] == first.views[v].camera.K.m[i]);
    CHECK(second.views[v].gt_depth->px == first.views[v].gt_depth->px);
  }
}

TEST_CASE("dataset: twenty-view turntable layout loads with the right counts") {
  TempDir dir("mvps_ds_20x96");
  AnalyticShape shape = make_sphere_scene(0.5);
  auto cams = make_ring_cameras(20, 2.0, {15}, 10, 8, 8);
  MvpsDataset ds = render_dataset(shape, cams, make_light_spiral(96), 0.0, 3);
  save_dataset(dir.str(), ds);
  MvpsDataset loaded = load_dataset(dir.str(), {1.0, false});
  CHECK(loaded.num_views() == 20);
  CHECK(loaded.num_lights() == 96);
}

TEST_CASE("dataset: missing light-directions file fails to load") {
  TempDir dir("mvps_ds_missing");
  AnalyticShape shape = make_sphere_scene(0.5);
  auto cams = make_ring_cameras(1, 2.0, {0}, 20, 16, 16);
  MvpsDataset ds = render_dataset(shape, cams, make_light_spiral(2), 0.0, 3);
  save_dataset(dir.str(), ds);
  fs::remove(dir.path / "lights.txt");
  CHECK_THROWS_AS(load_dataset(dir.str()), IoError);
}

TEST_CASE("dataset: image/calibration count mismatch is structural") {
  TempDir dir("mvps_ds_mismatch");
  AnalyticShape shape = make_sphere_scene(0.5);
  auto cams = make_ring_cameras(1, 2.0, {0}, 20, 16, 16);
  MvpsDataset ds = render_dataset(shape, cams, make_light_spiral(3), 0.0, 3);
  save_dataset(dir.str(), ds);
  fs::remove(dir.path / "view_00" / "light_002.png");
  CHECK_THROWS_AS(load_dataset(dir.str()), StructuralError);
}

TEST_CASE("camera: project/unproject round trip") {
  Camera cam = Camera::look_at({1.5, -2.0, 0.8}, {0.1, 0, 0}, {0, 0, 1}, 55, 64, 48);
  cam.validate();
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    Vec3 p{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
    Vec3 uvd = cam.project(p);
    REQUIRE(uvd.z > 0);
    Vec3 back = cam.unproject(uvd.x, uvd.y, uvd.z);
    CHECK(norm(back - p) <= 1e-9);
  }
}

TEST_CASE("pfm: three-channel round trip") {
  TempDir dir("mvps_pfm");
  Image img(5, 4, 3);
  Rng rng(2);
  for (double& v : img.px) v = float(rng.uniform(-3, 3));  // float-representable
  write_pfm(dir.str() + "/t.pfm", img);
  Image back = read_pfm(dir.str() + "/t.pfm");
  CHECK(back.px == img.px);
  CHECK(back.channels == 3);
}
