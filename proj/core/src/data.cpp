#include "crossdepth/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace crossdepth {

namespace {

using nlohmann::json;

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(const Vec3& a, double s) { return {a.x * s, a.y * s, a.z * s}; }
double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 normalized(const Vec3& a) {
  const double n = std::sqrt(dot(a, a));
  return {a.x / n, a.y / n, a.z / n};
}

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal;
  Vec3 albedo;
};

struct Sphere {
  Vec3 center;
  double radius;
  Vec3 albedo;
};

struct Box {
  Vec3 lo, hi;
  Vec3 albedo;
};

// Rays start at the origin with unnormalized direction (dx, dy, 1), so the
// ray parameter t is the z-depth directly.
bool hit_sphere(const Sphere& s, const Vec3& dir, Hit& best) {
  const double a = dot(dir, dir);
  const double b = -2.0 * dot(dir, s.center);
  const double c = dot(s.center, s.center) - s.radius * s.radius;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return false;
  const double sq = std::sqrt(disc);
  double t = (-b - sq) / (2.0 * a);
  if (t <= 1e-9) t = (-b + sq) / (2.0 * a);
  if (t <= 1e-9 || t >= best.t) return false;
  best.t = t;
  best.normal = normalized(dir * t - s.center);
  best.albedo = s.albedo;
  return true;
}

bool hit_box(const Box& box, const Vec3& dir, Hit& best) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int near_axis = -1;
  const double d[3] = {dir.x, dir.y, dir.z};
  const double lo[3] = {box.lo.x, box.lo.y, box.lo.z};
  const double hi[3] = {box.hi.x, box.hi.y, box.hi.z};
  for (int axis = 0; axis < 3; ++axis) {
    if (std::fabs(d[axis]) < 1e-12) {
      if (0.0 < lo[axis] || 0.0 > hi[axis]) return false;
      continue;
    }
    double t0 = lo[axis] / d[axis];
    double t1 = hi[axis] / d[axis];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_near) {
      t_near = t0;
      near_axis = axis;
    }
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return false;
  }
  if (near_axis < 0 || t_near <= 1e-9 || t_near >= best.t) return false;
  best.t = t_near;
  Vec3 n{0.0, 0.0, 0.0};
  const double sign = d[near_axis] > 0.0 ? -1.0 : 1.0;
  if (near_axis == 0) n.x = sign;
  else if (near_axis == 1) n.y = sign;
  else n.z = sign;
  best.normal = n;
  best.albedo = box.albedo;
  return true;
}

double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

void SceneSpec::validate() const {
  if (num_primitives < 0) throw std::invalid_argument("SceneSpec: negative primitive count");
  if (height < 8 || width < 8) throw std::invalid_argument("SceneSpec: minimum size is 8x8");
  if (invalid_fraction < 0.0 || invalid_fraction > 0.3)
    throw std::invalid_argument("SceneSpec: invalid_fraction must be in [0, 0.3]");
}

Sample generate_scene(const SceneSpec& spec, const std::string& id) {
  spec.validate();
  Rng rng(Rng::mix(spec.seed, 0x5ce9eull));
  const std::int64_t H = spec.height, W = spec.width;
  const double f = 0.9 * static_cast<double>(W);
  const double cx = 0.5 * static_cast<double>(W);
  const double cy = 0.5 * static_cast<double>(H);
  const double d_min = spec.depth_range.d_min, d_max = spec.depth_range.d_max;

  // Scene layout. y points down, so the floor sits at positive y.
  const double floor_y = rng.uniform(1.0, 1.7);
  const double wall_z = rng.uniform(0.55, 0.90) * d_max;
  const Vec3 floor_albedo{rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.9)};
  const Vec3 wall_albedo{rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.9)};
  const Vec3 light = normalized({rng.uniform(-0.5, 0.5), -rng.uniform(0.5, 1.0),
                                 rng.uniform(-0.5, 0.2)});

  std::vector<Sphere> spheres;
  std::vector<Box> boxes;
  for (std::int64_t i = 0; i < spec.num_primitives; ++i) {
    const bool is_sphere = rng.uniform() < 0.5;
    const double z = rng.uniform(std::max(0.25 * d_max, 2.0 * d_min), 0.8 * d_max);
    const double frustum_x = z * cx / f;
    const double frustum_y = z * cy / f;
    const Vec3 center{rng.uniform(-0.8, 0.8) * frustum_x, rng.uniform(-0.6, 0.8) * frustum_y, z};
    const Vec3 albedo{rng.uniform(0.2, 0.95), rng.uniform(0.2, 0.95), rng.uniform(0.2, 0.95)};
    const double size = rng.uniform(0.15, 0.4) * frustum_y;
    if (is_sphere) {
      spheres.push_back({center, size, albedo});
    } else {
      const Vec3 half{size * rng.uniform(0.6, 1.4), size * rng.uniform(0.6, 1.4),
                      size * rng.uniform(0.6, 1.4)};
      boxes.push_back({center - half, {center.x + half.x, center.y + half.y, center.z + half.z},
                       albedo});
    }
  }

  Tensor depth({1, H, W});
  Tensor rgb({3, H, W});
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x) {
      const Vec3 dir{(static_cast<double>(x) + 0.5 - cx) / f,
                     (static_cast<double>(y) + 0.5 - cy) / f, 1.0};
      Hit hit;
      if (spec.wall_enabled && wall_z < hit.t) {
        hit.t = wall_z;
        hit.normal = {0.0, 0.0, -1.0};
        hit.albedo = wall_albedo;
      }
      if (dir.y > 1e-9) {
        const double t = floor_y / dir.y;
        if (t > 1e-9 && t < hit.t) {
          hit.t = t;
          hit.normal = {0.0, -1.0, 0.0};
          hit.albedo = floor_albedo;
        }
      }
      for (const auto& s : spheres) hit_sphere(s, dir, hit);
      for (const auto& b : boxes) hit_box(b, dir, hit);

      double d = hit.t;
      if (!std::isfinite(d) || d < d_min || d > d_max) {
        depth.at3(0, y, x) = 0.0;
        // Unlabelled background still gets a color (dark haze).
        for (std::int64_t c = 0; c < 3; ++c) rgb.at3(c, y, x) = quantize8(0.08);
        continue;
      }
      depth.at3(0, y, x) = quantize_f32(d);
      const double diffuse = std::max(0.0, dot(hit.normal, {-light.x, -light.y, -light.z}));
      const double atten = 1.0 / (1.0 + 0.06 * d);
      const double shade = (0.25 + 0.75 * diffuse) * atten;
      rgb.at3(0, y, x) = quantize8(hit.albedo.x * shade);
      rgb.at3(1, y, x) = quantize8(hit.albedo.y * shade);
      rgb.at3(2, y, x) = quantize8(hit.albedo.z * shade);
    }
  }

  if (spec.invalid_fraction > 0.0) {
    for (std::int64_t i = 0; i < depth.numel(); ++i)
      if (rng.uniform() < spec.invalid_fraction) depth[i] = 0.0;
  }

  return Sample(RgbImage(std::move(rgb)), DepthMap(std::move(depth)), id);
}

// ---------------------------------------------------------------------------
// PPM / PFM

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  const std::int64_t H = image.height(), W = image.width();
  out << "P6\n" << W << " " << H << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(W) * 3);
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x)
      for (std::int64_t c = 0; c < 3; ++c)
        row[static_cast<std::size_t>(x * 3 + c)] = static_cast<unsigned char>(
            std::lround(std::clamp(image.data().at3(c, y, x), 0.0, 1.0) * 255.0));
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw std::runtime_error("failed writing PPM payload: " + path.string());
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {}
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace

RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  if (next_token(in) != "P6") throw std::runtime_error("malformed PPM header: " + path.string());
  std::int64_t W = 0, H = 0, maxval = 0;
  try {
    W = std::stoll(next_token(in));
    H = std::stoll(next_token(in));
    maxval = std::stoll(next_token(in));
  } catch (const std::exception&) {
    throw std::runtime_error("malformed PPM header: " + path.string());
  }
  if (W <= 0 || H <= 0 || maxval != 255)
    throw std::runtime_error("unsupported PPM dimensions or depth: " + path.string());
  std::vector<unsigned char> buf(static_cast<std::size_t>(W * H * 3));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size()))
    throw std::runtime_error("unexpected end of PPM payload: " + path.string());
  Tensor rgb({3, H, W});
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x)
      for (std::int64_t c = 0; c < 3; ++c)
        rgb.at3(c, y, x) = static_cast<double>(buf[static_cast<std::size_t>((y * W + x) * 3 + c)]) / 255.0;
  return RgbImage(std::move(rgb));
}

void write_pfm(const std::filesystem::path& path, const DepthMap& depth) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  const std::int64_t H = depth.height(), W = depth.width();
  out << "Pf\n" << W << " " << H << "\n-1.0\n";
  std::vector<float> row(static_cast<std::size_t>(W));
  // PFM stores rows bottom-to-top.
  for (std::int64_t y = H - 1; y >= 0; --y) {
    for (std::int64_t x = 0; x < W; ++x)
      row[static_cast<std::size_t>(x)] = static_cast<float>(depth.data().at3(0, y, x));
    if constexpr (std::endian::native == std::endian::big) {
      for (float& v : row) {
        auto bits = std::bit_cast<std::uint32_t>(v);
        bits = __builtin_bswap32(bits);
        v = std::bit_cast<float>(bits);
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("failed writing PFM payload: " + path.string());
}

DepthMap read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  const std::string magic = next_token(in);
  if (magic == "PF") throw std::runtime_error("expected single-channel PFM (Pf): " + path.string());
  if (magic != "Pf") throw std::runtime_error("malformed PFM header: " + path.string());
  std::int64_t W = 0, H = 0;
  double scale = 0.0;
  try {
    W = std::stoll(next_token(in));
    H = std::stoll(next_token(in));
    scale = std::stod(next_token(in));
  } catch (const std::exception&) {
    throw std::runtime_error("malformed PFM header: " + path.string());
  }
  if (W <= 0 || H <= 0) throw std::runtime_error("malformed PFM header: " + path.string());
  if (scale >= 0.0) throw std::runtime_error("big-endian PFM unsupported: " + path.string());
  std::vector<float> buf(static_cast<std::size_t>(W * H));
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
    throw std::runtime_error("unexpected end of PFM payload: " + path.string());
  if constexpr (std::endian::native == std::endian::big) {
    for (float& v : buf) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      bits = __builtin_bswap32(bits);
      v = std::bit_cast<float>(bits);
    }
  }
  Tensor depth({1, H, W});
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x)
      depth.at3(0, y, x) = static_cast<double>(buf[static_cast<std::size_t>((H - 1 - y) * W + x)]);
  return DepthMap(std::move(depth));
}

void write_sample(const std::filesystem::path& dir, const Sample& sample) {
  std::filesystem::create_directories(dir);
  write_ppm(dir / (sample.id + ".ppm"), sample.image);
  write_pfm(dir / (sample.id + ".pfm"), sample.gt_depth);
}

Sample read_sample(const std::filesystem::path& dir, const std::string& id) {
  RgbImage image = read_ppm(dir / (id + ".ppm"));
  DepthMap depth = read_pfm(dir / (id + ".pfm"));
  return Sample(std::move(image), std::move(depth), id);
}

// ---------------------------------------------------------------------------
// Manifest & dataset generation

const std::vector<ManifestEntry>& DatasetManifest::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split: " + name);
}

namespace {

json split_to_json(const std::vector<ManifestEntry>& entries) {
  json arr = json::array();
  for (const auto& e : entries)
    arr.push_back({{"id", e.id}, {"image", e.image_path}, {"depth", e.depth_path}});
  return arr;
}

std::vector<ManifestEntry> split_from_json(const json& arr) {
  std::vector<ManifestEntry> out;
  for (const auto& e : arr)
    out.push_back({e.at("id").get<std::string>(), e.at("image").get<std::string>(),
                   e.at("depth").get<std::string>()});
  return out;
}

}  // namespace

void write_manifest(const std::filesystem::path& root, const DatasetManifest& manifest) {
  json j;
  j["height"] = manifest.height;
  j["width"] = manifest.width;
  j["seed"] = manifest.seed;
  j["depth_range"] = {manifest.depth_range.d_min, manifest.depth_range.d_max};
  j["splits"] = {{"train", split_to_json(manifest.train)},
                 {"val", split_to_json(manifest.val)},
                 {"test", split_to_json(manifest.test)}};
  std::ofstream out(root / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest at " + root.string());
  out << j.dump(2) << "\n";
}

DatasetManifest read_manifest(const std::filesystem::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw std::runtime_error("missing manifest.json in " + root.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed manifest.json: " + std::string(e.what()));
  }
  DatasetManifest m;
  m.height = j.at("height").get<std::int64_t>();
  m.width = j.at("width").get<std::int64_t>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.depth_range = DepthRange(j.at("depth_range")[0].get<double>(),
                             j.at("depth_range")[1].get<double>());
  m.train = split_from_json(j.at("splits").at("train"));
  m.val = split_from_json(j.at("splits").at("val"));
  m.test = split_from_json(j.at("splits").at("test"));
  for (const auto* split : {&m.train, &m.val, &m.test}) {
    std::set<std::string> ids;
    for (const auto& e : *split) {
      if (!ids.insert(e.id).second)
        throw std::runtime_error("duplicate sample id in manifest: " + e.id);
      if (!std::filesystem::exists(root / e.image_path) ||
          !std::filesystem::exists(root / e.depth_path))
        throw std::runtime_error("manifest references missing files for id " + e.id);
    }
  }
  return m;
}

DatasetManifest generate_dataset(const std::filesystem::path& root,
                                 const SynthDatasetOptions& options) {
  options.scene.validate();
  DatasetManifest manifest;
  manifest.height = options.scene.height;
  manifest.width = options.scene.width;
  manifest.depth_range = options.scene.depth_range;
  manifest.seed = options.scene.seed;

  const struct {
    const char* name;
    std::int64_t count;
    std::uint64_t tag;
    std::vector<ManifestEntry>* entries;
  } splits[] = {{"train", options.train_count, 1, &manifest.train},
                {"val", options.val_count, 2, &manifest.val},
                {"test", options.test_count, 3, &manifest.test}};

  for (const auto& split : splits) {
    if (split.count == 0) continue;
    const std::filesystem::path dir = root / split.name;
    std::filesystem::create_directories(dir);
    for (std::int64_t i = 0; i < split.count; ++i) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s_%06lld", split.name, static_cast<long long>(i));
      SceneSpec spec = options.scene;
      spec.seed = Rng::mix(options.scene.seed, split.tag, static_cast<std::uint64_t>(i));
      Sample sample = generate_scene(spec, buf);
      write_sample(dir, sample);
      split.entries->push_back({sample.id, std::string(split.name) + "/" + sample.id + ".ppm",
                                std::string(split.name) + "/" + sample.id + ".pfm"});
    }
  }
  write_manifest(root, manifest);
  return manifest;
}

std::vector<Sample> load_split(const std::filesystem::path& root, const DatasetManifest& manifest,
                               const std::string& split) {
  std::vector<Sample> out;
  for (const auto& e : manifest.split(split)) {
    RgbImage image = read_ppm(root / e.image_path);
    DepthMap depth = read_pfm(root / e.depth_path);
    out.emplace_back(std::move(image), std::move(depth), e.id);
  }
  return out;
}

}  // namespace crossdepth
