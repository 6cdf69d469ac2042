#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "mvps/render.hpp"

namespace mvps::scene {

namespace fs = std::filesystem;

// One turntable capture. All views share the light set (camera-frame
// directions) and therefore the light count.
struct View {
  Camera camera;
  std::vector<Image> light_images;
  Image mask;
  std::optional<Image> gt_depth;
  std::optional<Image> gt_normal;  // world frame
};

struct MvpsDataset {
  std::vector<View> views;
  std::vector<DirectionalLight> lights;
  std::optional<std::string> gt_mesh_path;

  int num_views() const { return int(views.size()); }
  int num_lights() const { return int(lights.size()); }

  void validate() const {
    if (views.empty()) throw StructuralError("MvpsDataset: no views");
    for (size_t v = 0; v < views.size(); ++v) {
      const View& view = views[v];
      if (int(view.light_images.size()) != num_lights())
        throw StructuralError("MvpsDataset: view " + std::to_string(v) + " has " +
                              std::to_string(view.light_images.size()) + " images, expected " +
                              std::to_string(num_lights()));
      for (const Image& im : view.light_images)
        if (im.width != view.camera.width || im.height != view.camera.height)
          throw StructuralError("MvpsDataset: image dims disagree with camera in view " +
                                std::to_string(v));
      if (view.mask.width != view.camera.width || view.mask.height != view.camera.height)
        throw StructuralError("MvpsDataset: mask dims disagree with camera in view " +
                              std::to_string(v));
    }
  }
};

namespace detail {

inline std::string view_dir_name(int v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "view_%02d", v);
  return buf;
}
inline std::string light_file_name(int k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "light_%03d.png", k);
  return buf;
}
inline std::string index2(int v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02d", v);
  return buf;
}

inline void write_camera_txt(const std::string& path, const Camera& cam) {
  std::ofstream f(path);
  if (!f) throw IoError("dataset: cannot write " + path);
  f << std::setprecision(17);
  for (int r = 0; r < 3; ++r)
    f << cam.K(r, 0) << " " << cam.K(r, 1) << " " << cam.K(r, 2) << "\n";
  for (int r = 0; r < 3; ++r)
    f << cam.R(r, 0) << " " << cam.R(r, 1) << " " << cam.R(r, 2) << "\n";
  f << cam.t.x << " " << cam.t.y << " " << cam.t.z << "\n";
}

inline Camera read_camera_txt(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("dataset: missing calibration file " + path);
  Camera cam;
  double vals[21];
  for (int i = 0; i < 21; ++i)
    if (!(f >> vals[i]))
      throw StructuralError("dataset: calibration file " + path + " is truncated");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      cam.K(r, c) = vals[r * 3 + c];
      cam.R(r, c) = vals[9 + r * 3 + c];
    }
  cam.t = {vals[18], vals[19], vals[20]};
  return cam;
}

}  // namespace detail

// Intensities are stored linearly; a non-unit gamma decodes stored values as
// value^gamma on load for captures with unknown radiometry.
struct DatasetLoadOptions {
  double gamma = 1.0;
  bool load_gt = true;
};

// Directory layout:
//   lights.txt             one light per row: lx ly lz intensity (camera frame)
//   view_XX/camera.txt     K rows, R rows, t (row-major, world-to-camera)
//   view_XX/light_YYY.png  16-bit grayscale with a "scale" text chunk
//   view_XX/mask.png       binary object mask
//   gt/depth_XX.pfm        optional camera-z depth
//   gt/normal_XX.pfm       optional world-frame normals
//   gt/mesh.ply            optional reference surface
inline void save_dataset(const std::string& root, const MvpsDataset& ds) {
  ds.validate();
  fs::create_directories(root);
  {
    std::ofstream f(root + "/lights.txt");
    if (!f) throw IoError("dataset: cannot write " + root + "/lights.txt");
    f << std::setprecision(17);
    for (const DirectionalLight& l : ds.lights)
      f << l.dir.x << " " << l.dir.y << " " << l.dir.z << " " << l.intensity << "\n";
  }
  bool any_gt = false;
  for (int v = 0; v < ds.num_views(); ++v) {
    const View& view = ds.views[size_t(v)];
    std::string vd = root + "/" + detail::view_dir_name(v);
    fs::create_directories(vd);
    detail::write_camera_txt(vd + "/camera.txt", view.camera);
    write_mask_png(vd + "/mask.png", view.mask);
    for (int k = 0; k < ds.num_lights(); ++k) {
      const Image& im = view.light_images[size_t(k)];
      double mx = 0;
      for (double p : im.px) mx = std::fmax(mx, p);
      write_png16(vd + "/" + detail::light_file_name(k), im, mx > 0 ? mx : 1.0);
    }
    if (view.gt_depth || view.gt_normal) any_gt = true;
  }
  if (any_gt) {
    fs::create_directories(root + "/gt");
    for (int v = 0; v < ds.num_views(); ++v) {
      const View& view = ds.views[size_t(v)];
      if (view.gt_depth)
        write_pfm(root + "/gt/depth_" + detail::index2(v) + ".pfm", *view.gt_depth);
      if (view.gt_normal)
        write_pfm(root + "/gt/normal_" + detail::index2(v) + ".pfm", *view.gt_normal);
    }
  }
}

inline MvpsDataset load_dataset(const std::string& root, const DatasetLoadOptions& opt = {}) {
  if (!fs::is_directory(root)) throw IoError("dataset: no such directory " + root);
  MvpsDataset ds;
  {
    std::string path = root + "/lights.txt";
    std::ifstream f(path);
    if (!f) throw IoError("dataset: missing light-directions file " + path);
    double lx, ly, lz, e;
    while (f >> lx >> ly >> lz >> e) ds.lights.push_back({{lx, ly, lz}, e});
    if (ds.lights.empty()) throw StructuralError("dataset: " + path + " lists no lights");
  }
  for (int v = 0;; ++v) {
    std::string vd = root + "/" + detail::view_dir_name(v);
    if (!fs::is_directory(vd)) break;
    View view;
    view.camera = detail::read_camera_txt(vd + "/camera.txt");
    for (int k = 0; k < ds.num_lights(); ++k) {
      std::string ip = vd + "/" + detail::light_file_name(k);
      if (!fs::exists(ip))
        throw StructuralError("dataset: view " + std::to_string(v) + " has " +
                              std::to_string(k) + " images but " +
                              std::to_string(ds.num_lights()) + " lights are calibrated");
      view.light_images.push_back(read_png16(ip));
      if (opt.gamma != 1.0)
        for (double& p : view.light_images.back().px) p = std::pow(p, opt.gamma);
    }
    if (fs::exists(vd + "/" + detail::light_file_name(ds.num_lights())))
      throw StructuralError("dataset: view " + std::to_string(v) +
                            " has more images than calibrated lights");
    view.mask = read_mask_png(vd + "/mask.png");
    view.camera.width = view.mask.width;
    view.camera.height = view.mask.height;
    view.camera.validate();
    if (opt.load_gt) {
      std::string dp = root + "/gt/depth_" + detail::index2(v) + ".pfm";
      std::string np = root + "/gt/normal_" + detail::index2(v) + ".pfm";
      if (fs::exists(dp)) view.gt_depth = read_pfm(dp);
      if (fs::exists(np)) view.gt_normal = read_pfm(np);
    }
    ds.views.push_back(std::move(view));
  }
  if (fs::exists(root + "/gt/mesh.ply")) ds.gt_mesh_path = root + "/gt/mesh.ply";
  ds.validate();
  return ds;
}

// Renders and assembles a full synthetic capture.
inline MvpsDataset render_dataset(const AnalyticShape& shape, const std::vector<Camera>& cameras,
                                  const std::vector<DirectionalLight>& lights, double sigma_img,
                                  uint64_t seed, const RenderOptions& opt = {}) {
  MvpsDataset ds;
  ds.lights = lights;
  for (size_t v = 0; v < cameras.size(); ++v) {
    ViewRender r = render_view(shape, cameras[v], lights, sigma_img, seed ^ (0x9e37 + v), opt);
    View view;
    view.camera = cameras[v];
    view.light_images = std::move(r.light_images);
    view.mask = std::move(r.mask);
    view.gt_depth = std::move(r.depth);
    view.gt_normal = std::move(r.normal);
    ds.views.push_back(std::move(view));
  }
  return ds;
}

}  // namespace mvps::scene
