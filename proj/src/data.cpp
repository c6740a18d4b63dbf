#include "ffn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace ffn {

namespace {

constexpr char kMagic[8] = {'F', 'F', 'N', 'D', 'A', 'T', 'A', '1'};

struct Direction {
  const char* name;
  double dx, dy;
};

const double kDiag = 1.0 / std::sqrt(2.0);
const Direction kDirections[8] = {
    {"right", 1, 0},           {"left", -1, 0},          {"down", 0, 1},          {"up", 0, -1},
    {"down_right", kDiag, kDiag}, {"up_left", -kDiag, -kDiag}, {"down_left", -kDiag, kDiag}, {"up_right", kDiag, -kDiag},
};

constexpr double kBackground = 0.2;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Signed offset of a from b on a ring of length n, in [-n/2, n/2).
double wrap_offset(double a, double b, double n) {
  double d = std::fmod(a - b, n);
  if (d < -n / 2) d += n;
  if (d >= n / 2) d -= n;
  return d;
}

// Antialiased coverage of a pixel centre at offset (dx, dy) from the sprite centre.
double coverage(int kind, double dx, double dy) {
  double dist, radius;
  switch (kind) {
    case 0: dist = std::hypot(dx, dy); radius = 3.0; break;
    case 1: dist = std::max(std::abs(dx), std::abs(dy)); radius = 2.5; break;
    default: dist = std::abs(dx) + std::abs(dy); radius = 3.5; break;
  }
  return std::clamp(radius + 0.5 - dist, 0.0, 1.0);
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

nlohmann::json motion_json(const MotionParams& m) {
  return {{"direction", m.direction}, {"speed_tier", m.speed_tier}, {"speed", m.speed}, {"start_x", m.start_x},
          {"start_y", m.start_y},     {"sprite_kind", m.sprite_kind}, {"intensity", m.intensity}};
}

MotionParams motion_from_json(const nlohmann::json& j) {
  MotionParams m;
  m.direction = j.at("direction").get<int>();
  m.speed_tier = j.at("speed_tier").get<int>();
  m.speed = j.at("speed").get<double>();
  m.start_x = j.at("start_x").get<double>();
  m.start_y = j.at("start_y").get<double>();
  m.sprite_kind = j.at("sprite_kind").get<int>();
  m.intensity = j.at("intensity").get<double>();
  return m;
}

bool is_directory_with_entries(const std::filesystem::path& p) {
  return std::filesystem::is_directory(p) && !std::filesystem::is_empty(p);
}

std::vector<std::filesystem::path> sorted_children(const std::filesystem::path& dir, bool directories) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_directory() == directories) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void read_class_tree(const std::filesystem::path& root, int channels, int size, std::vector<std::string>& names,
                     std::vector<Clip>& out) {
  for (const auto& class_dir : sorted_children(root, true)) {
    const std::string name = class_dir.filename().string();
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw std::runtime_error("class " + name + " in " + root.string() + " is not in the class list");
    const int label = static_cast<int>(it - names.begin());
    for (const auto& clip_dir : sorted_children(class_dir, true)) {
      Clip c = load_clip_folder(clip_dir, channels, size);
      c.label = label;
      out.push_back(std::move(c));
    }
  }
}

std::vector<std::string> class_dirs(const std::filesystem::path& root) {
  std::vector<std::string> names;
  for (const auto& d : sorted_children(root, true)) names.push_back(d.filename().string());
  return names;
}

}  // namespace

void SyntheticConfig::validate() const {
  if (num_classes < 4 || num_classes > 16) throw std::invalid_argument("synthetic data: num_classes must be in 4..16");
  if (samples_per_class < 1) throw std::invalid_argument("synthetic data: samples_per_class must be positive");
  if (frames < 1 || size < 8) throw std::invalid_argument("synthetic data: bad clip geometry");
  if (channels != 1 && channels != 3) throw std::invalid_argument("synthetic data: channels must be 1 or 3");
  if (!(slow_speed > 0) || !(fast_speed > slow_speed)) {
    throw std::invalid_argument("synthetic data: need 0 < slow_speed < fast_speed");
  }
  if (noise_sigma < 0) throw std::invalid_argument("synthetic data: negative noise");
  if (!(train_fraction > 0 && train_fraction < 1)) throw std::invalid_argument("synthetic data: train_fraction outside (0, 1)");
}

void to_json(nlohmann::json& j, const SyntheticConfig& c) {
  j = {{"num_classes", c.num_classes}, {"samples_per_class", c.samples_per_class}, {"seed", c.seed},
       {"frames", c.frames},           {"channels", c.channels},                   {"size", c.size},
       {"slow_speed", c.slow_speed},   {"fast_speed", c.fast_speed},               {"noise_sigma", c.noise_sigma},
       {"train_fraction", c.train_fraction}};
}

void from_json(const nlohmann::json& j, SyntheticConfig& c) {
  c.num_classes = j.at("num_classes").get<int>();
  c.samples_per_class = j.at("samples_per_class").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.frames = j.at("frames").get<int>();
  c.channels = j.at("channels").get<int>();
  c.size = j.at("size").get<int>();
  c.slow_speed = j.at("slow_speed").get<double>();
  c.fast_speed = j.at("fast_speed").get<double>();
  c.noise_sigma = j.at("noise_sigma").get<double>();
  c.train_fraction = j.at("train_fraction").get<double>();
}

int class_label(int direction, int speed_tier) {
  if (direction < 0 || direction >= 8 || speed_tier < 0 || speed_tier > 1) {
    throw std::out_of_range("class_label: no such direction/speed");
  }
  return direction * 2 + speed_tier;
}

std::string class_name(int label) {
  if (label < 0 || label >= 16) throw std::out_of_range("class_name: label out of range");
  return std::string(kDirections[label / 2].name) + (label % 2 ? "_fast" : "_slow");
}

Clip render_clip(const MotionParams& m, int label, const SyntheticConfig& cfg, std::uint64_t noise_seed) {
  Clip clip;
  clip.frame_count = cfg.frames;
  clip.label = label;
  clip.motion = m;
  const int S = cfg.size, C = cfg.channels;
  const std::size_t plane = static_cast<std::size_t>(S) * S;
  clip.pixels.resize(plane * C * cfg.frames);

  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto& dir = kDirections[m.direction];
  std::vector<double> sprite(plane);
  for (int t = 0; t < cfg.frames; ++t) {
    const double cx = m.start_x + dir.dx * m.speed * t;
    const double cy = m.start_y + dir.dy * m.speed * t;
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        sprite[y * S + x] = coverage(m.sprite_kind, wrap_offset(x, cx, S), wrap_offset(y, cy, S));
      }
    for (int c = 0; c < C; ++c) {
      std::uint8_t* dst = clip.pixels.data() + (static_cast<std::size_t>(t) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double bg = kBackground + cfg.noise_sigma * noise(rng);
        dst[i] = quantize(bg + (m.intensity - bg) * sprite[i]);
      }
    }
  }
  return clip;
}

Dataset generate_synthetic_dataset(const SyntheticConfig& cfg) {
  cfg.validate();
  const int K = cfg.num_classes, per = cfg.samples_per_class;
  const int n_train = std::clamp(static_cast<int>(std::lround(cfg.train_fraction * per)), 1, std::max(1, per - 1));
  std::vector<Clip> clips(static_cast<std::size_t>(K) * per);

#pragma omp parallel for schedule(dynamic, 8)
  for (int i = 0; i < K * per; ++i) {
    const int label = i / per;
    std::mt19937_64 rng(splitmix64(cfg.seed * 0x100000001B3ull + static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<double> pos(0.0, cfg.size);
    std::uniform_int_distribution<int> kind(0, 2);
    std::uniform_real_distribution<double> bright(0.75, 1.0);
    MotionParams m;
    m.direction = label / 2;
    m.speed_tier = label % 2;
    m.speed = m.speed_tier ? cfg.fast_speed : cfg.slow_speed;
    m.start_x = pos(rng);
    m.start_y = pos(rng);
    m.sprite_kind = kind(rng);
    m.intensity = bright(rng);
    clips[i] = render_clip(m, label, cfg, rng());
  }

  Dataset d;
  d.channels = cfg.channels;
  d.height = d.width = cfg.size;
  d.num_classes = K;
  for (int k = 0; k < K; ++k) d.class_names.push_back(class_name(k));
  for (int i = 0; i < K * per; ++i) {
    (i % per < n_train ? d.train : d.val).push_back(std::move(clips[i]));
  }
  d.origin = {{"synthetic", cfg}};
  return d;
}

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  nlohmann::json index = {{"channels", d.channels},       {"height", d.height},
                          {"width", d.width},             {"num_classes", d.num_classes},
                          {"class_names", d.class_names}, {"origin", d.origin},
                          {"clips", nlohmann::json::array()}};
  for (const auto* split : {&d.train, &d.val}) {
    for (const auto& c : *split) {
      index["clips"].push_back({{"split", split == &d.train ? "train" : "val"},
                                {"label", c.label},
                                {"frames", c.frame_count},
                                {"motion", motion_json(c.motion)}});
    }
  }
  const std::string text = index.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write dataset archive: " + tmp);
    out.write(kMagic, sizeof kMagic);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(len));
    for (const auto* split : {&d.train, &d.val})
      for (const auto& c : *split) out.write(reinterpret_cast<const char*>(c.pixels.data()), c.pixels.size());
    if (!out) throw std::runtime_error("failed writing dataset archive: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset archive: " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw std::runtime_error("not a dataset archive: " + path.string());
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("truncated dataset index: " + path.string());
  const auto index = nlohmann::json::parse(text);

  Dataset d;
  d.channels = index.at("channels").get<int>();
  d.height = index.at("height").get<int>();
  d.width = index.at("width").get<int>();
  d.num_classes = index.at("num_classes").get<int>();
  d.class_names = index.at("class_names").get<std::vector<std::string>>();
  d.origin = index.at("origin");
  const std::size_t frame_bytes = static_cast<std::size_t>(d.channels) * d.height * d.width;
  for (const auto& e : index.at("clips")) {
    Clip c;
    c.label = e.at("label").get<int>();
    c.frame_count = e.at("frames").get<int>();
    c.motion = motion_from_json(e.at("motion"));
    c.pixels.resize(frame_bytes * c.frame_count);
    in.read(reinterpret_cast<char*>(c.pixels.data()), static_cast<std::streamsize>(c.pixels.size()));
    if (!in) throw std::runtime_error("truncated dataset payload: " + path.string());
    (e.at("split").get<std::string>() == "train" ? d.train : d.val).push_back(std::move(c));
  }
  return d;
}

Dataset load_or_generate(const SyntheticConfig& cfg, const std::filesystem::path& cache, bool regenerate) {
  if (!regenerate && std::filesystem::exists(cache)) {
    Dataset d = load_dataset(cache);
    if (d.origin.contains("synthetic") && d.origin["synthetic"].get<SyntheticConfig>() == cfg) return d;
  }
  Dataset d = generate_synthetic_dataset(cfg);
  save_dataset(d, cache);
  return d;
}

std::string dataset_digest(const Dataset& d) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto* split : {&d.train, &d.val}) {
    for (const auto& c : *split) {
      mix(&c.label, sizeof c.label);
      mix(c.pixels.data(), c.pixels.size());
    }
  }
  return hex64(h);
}

// ---------------------------------------------------------------- folders

Clip load_clip_folder(const std::filesystem::path& dir, int channels, int size) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  if (channels != 1 && channels != 3) throw std::invalid_argument("load_clip_folder: channels must be 1 or 3");
  const auto files = sorted_children(dir, false);
  if (files.empty()) throw std::runtime_error("no frames in folder: " + dir.string());

  Clip clip;
  clip.frame_count = static_cast<int>(files.size());
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  clip.pixels.resize(plane * channels * files.size());
  for (std::size_t t = 0; t < files.size(); ++t) {
    cv::Mat img = cv::imread(files[t].string(), channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
    if (img.empty()) throw std::runtime_error("unreadable or non-image file: " + files[t].string());
    cv::Mat resized;
    cv::resize(img, resized, cv::Size(size, size), 0, 0, cv::INTER_AREA);
    if (channels == 3) cv::cvtColor(resized, resized, cv::COLOR_BGR2RGB);
    std::uint8_t* dst = clip.pixels.data() + t * plane * channels;
    for (int y = 0; y < size; ++y) {
      const std::uint8_t* row = resized.ptr<std::uint8_t>(y);
      for (int x = 0; x < size; ++x)
        for (int c = 0; c < channels; ++c) dst[c * plane + y * size + x] = row[x * channels + c];
    }
  }
  return clip;
}

VideoTensor<float> load_frame_folder(const std::filesystem::path& dir, int channels, int size) {
  const Clip clip = load_clip_folder(dir, channels, size);
  VideoTensor<float> v(1, clip.frame_count, channels, size, size);
  std::transform(clip.pixels.begin(), clip.pixels.end(), v.frames.data.begin(), pixel_to_input);
  return v;
}

Dataset load_frame_tree(const std::filesystem::path& root, int channels, int size) {
  if (!std::filesystem::is_directory(root)) throw std::runtime_error("not a directory: " + root.string());
  Dataset d;
  d.channels = channels;
  d.height = d.width = size;
  const bool split = is_directory_with_entries(root / "train") && is_directory_with_entries(root / "val");
  d.class_names = class_dirs(split ? root / "train" : root);
  if (d.class_names.empty()) throw std::runtime_error("no class directories under " + root.string());
  d.num_classes = static_cast<int>(d.class_names.size());
  if (split) {
    read_class_tree(root / "train", channels, size, d.class_names, d.train);
    read_class_tree(root / "val", channels, size, d.class_names, d.val);
  } else {
    read_class_tree(root, channels, size, d.class_names, d.val);
  }
  d.origin = {{"folder", root.string()}};
  return d;
}

// ---------------------------------------------------------------- sampling

std::vector<int> uniform_sample(int total, int t, SampleVariant variant, std::mt19937_64* rng) {
  if (total < 1 || t < 1) throw std::invalid_argument("uniform_sample: total and t must be positive");
  if (variant == SampleVariant::train && rng == nullptr) throw std::invalid_argument("uniform_sample: training variant needs a generator");
  std::vector<int> idx(t);
  const long T = total, n = t;
  for (long i = 0; i < n; ++i) {
    const long centre = (2 * i + 1) * T / (2 * n);
    const long lo = i * T / n, hi = (i + 1) * T / n;
    if (variant == SampleVariant::eval || hi <= lo) {
      idx[i] = static_cast<int>(centre);
    } else {
      std::uniform_int_distribution<long> pick(lo, hi - 1);
      idx[i] = static_cast<int>(pick(*rng));
    }
  }
  return idx;
}

template <typename T>
void write_clip_frames(const Clip& clip, std::span<const int> frames, int channels, int height, int width,
                       VideoTensor<T>& out, int slot) {
  const std::size_t fsize = static_cast<std::size_t>(channels) * height * width;
  if (clip.pixels.size() != fsize * clip.frame_count) throw ShapeError("clip pixels do not match the dataset geometry");
  if (static_cast<int>(frames.size()) != out.frame_count || out.frames.frame_size() != fsize) {
    throw ShapeError("write_clip_frames: batch tensor has the wrong shape");
  }
  T* dst = out.clip(slot);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t] < 0 || frames[t] >= clip.frame_count) throw std::out_of_range("frame index outside clip");
    const std::uint8_t* src = clip.pixels.data() + frames[t] * fsize;
    for (std::size_t i = 0; i < fsize; ++i) dst[t * fsize + i] = static_cast<T>(pixel_to_input(src[i]));
  }
}

template <typename T>
VideoTensor<T> make_batch(const Dataset& data, const std::vector<Clip>& split, std::span<const int> indices, int t,
                          SampleVariant variant, std::mt19937_64* rng) {
  VideoTensor<T> out(static_cast<int>(indices.size()), t, data.channels, data.height, data.width);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Clip& clip = split.at(indices[b]);
    const auto frames = uniform_sample(clip.frame_count, t, variant, rng);
    write_clip_frames(clip, std::span<const int>(frames), data.channels, data.height, data.width, out,
                      static_cast<int>(b));
  }
  return out;
}

template void write_clip_frames(const Clip&, std::span<const int>, int, int, int, VideoTensor<float>&, int);
template void write_clip_frames(const Clip&, std::span<const int>, int, int, int, VideoTensor<double>&, int);
template VideoTensor<float> make_batch(const Dataset&, const std::vector<Clip>&, std::span<const int>, int,
                                       SampleVariant, std::mt19937_64*);
template VideoTensor<double> make_batch(const Dataset&, const std::vector<Clip>&, std::span<const int>, int,
                                        SampleVariant, std::mt19937_64*);

}  // namespace ffn
