#include "mba/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "mba/error.hpp"

namespace mba {

using nlohmann::json;

namespace {

constexpr std::uint16_t kVersion = 1;
constexpr std::uint64_t kMaxPixels = std::uint64_t{1} << 31;

template <typename T>
T byteswap_if_needed(T value) {
  if constexpr (std::endian::native == std::endian::little) {
    return value;
  } else {
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    std::reverse(raw, raw + sizeof(T));
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }
}

class ByteWriter {
 public:
  void magic(const char* tag) { bytes_.insert(bytes_.end(), tag, tag + 4); }
  template <typename T>
  void put(T value) {
    value = byteswap_if_needed(value);
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    bytes_.insert(bytes_.end(), raw, raw + sizeof(T));
  }
  void reserve(std::size_t n) { bytes_.reserve(n); }
  std::vector<unsigned char> take() { return std::move(bytes_); }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

  void expect_magic(const char* tag) {
    need(4);
    if (std::memcmp(bytes_.data() + pos_, tag, 4) != 0) {
      throw Error(ErrorCode::kBadMagic, std::string("expected magic '") + tag + "'");
    }
    pos_ += 4;
  }
  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return byteswap_if_needed(value);
  }
  void expect_remaining(std::uint64_t n) const {
    const std::uint64_t left = bytes_.size() - pos_;
    if (left < n) throw Error(ErrorCode::kTruncatedFile, "file is shorter than its header implies");
    if (left > n) throw Error(ErrorCode::kTrailingData, "file has trailing bytes after the payload");
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::kTruncatedFile, "file ends inside the header");
  }
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

void read_header(ByteReader& in, const char* tag) {
  in.expect_magic(tag);
  const auto version = in.get<std::uint16_t>();
  in.get<std::uint16_t>();
  if (version != kVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, "unsupported format version " + std::to_string(version));
  }
}

std::pair<int, int> read_dimensions(ByteReader& in) {
  const auto height = in.get<std::uint32_t>();
  const auto width = in.get<std::uint32_t>();
  if (static_cast<std::uint64_t>(height) * width > kMaxPixels || height > INT32_MAX || width > INT32_MAX) {
    throw Error(ErrorCode::kDimensionOverflow, "image dimensions exceed 2^31 pixels");
  }
  return {static_cast<int>(height), static_cast<int>(width)};
}

void write_dimensions(ByteWriter& out, int height, int width) {
  if (height < 0 || width < 0 || static_cast<std::uint64_t>(height) * static_cast<std::uint64_t>(width) > kMaxPixels) {
    throw Error(ErrorCode::kDimensionOverflow, "image dimensions exceed 2^31 pixels");
  }
  out.put<std::uint32_t>(static_cast<std::uint32_t>(height));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(width));
}

void write_header(ByteWriter& out, const char* tag) {
  out.magic(tag);
  out.put<std::uint16_t>(kVersion);
  out.put<std::uint16_t>(0);
}

void check_confidence(float c) {
  if (!(c >= 0.0f && c <= 1.0f)) {
    throw Error(ErrorCode::kConfidenceOutOfRange, "match confidence outside [0, 1]");
  }
}

json matrix_json(const Eigen::Matrix3d& m) {
  json out = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out.push_back(m(r, c));
  }
  return out;
}

}  // namespace

std::vector<unsigned char> read_file_bytes(const fs::path& path) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) throw Error(ErrorCode::kIoNotFound, "no such file: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::kIoError, "read failed: " + path.string());
  return bytes;
}

void write_file_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, "write failed: " + path.string());
}

DepthMap parse_depth(const std::vector<unsigned char>& bytes) {
  ByteReader in(bytes);
  read_header(in, "MBAD");
  const auto [height, width] = read_dimensions(in);
  const std::uint64_t n = static_cast<std::uint64_t>(height) * static_cast<std::uint64_t>(width);
  in.expect_remaining(n * 4);
  DepthMap depth(width, height);
  for (float& v : depth.values) v = in.get<float>();
  return depth;
}

std::vector<unsigned char> serialize_depth(const DepthMap& depth) {
  if (depth.values.size() != static_cast<std::size_t>(depth.width) * static_cast<std::size_t>(depth.height)) {
    throw Error(ErrorCode::kInvalidArgument, "depth map size does not match its dimensions");
  }
  ByteWriter out;
  out.reserve(16 + depth.values.size() * 4);
  write_header(out, "MBAD");
  write_dimensions(out, depth.height, depth.width);
  for (const float v : depth.values) out.put<float>(v);
  return out.take();
}

PointMap parse_pointmap(const std::vector<unsigned char>& bytes) {
  ByteReader in(bytes);
  read_header(in, "MBAP");
  const auto [height, width] = read_dimensions(in);
  const std::uint64_t n = static_cast<std::uint64_t>(height) * static_cast<std::uint64_t>(width);
  in.expect_remaining(n * 12);
  PointMap points(width, height);
  for (Eigen::Vector3f& p : points.points) {
    for (int k = 0; k < 3; ++k) p[k] = in.get<float>();
  }
  return points;
}

std::vector<unsigned char> serialize_pointmap(const PointMap& points) {
  if (points.points.size() != static_cast<std::size_t>(points.width) * static_cast<std::size_t>(points.height)) {
    throw Error(ErrorCode::kInvalidArgument, "pointmap size does not match its dimensions");
  }
  ByteWriter out;
  out.reserve(16 + points.points.size() * 12);
  write_header(out, "MBAP");
  write_dimensions(out, points.height, points.width);
  for (const Eigen::Vector3f& p : points.points) {
    for (int k = 0; k < 3; ++k) out.put<float>(p[k]);
  }
  return out.take();
}

CorrespondenceSet parse_correspondences(const std::vector<unsigned char>& bytes) {
  ByteReader in(bytes);
  read_header(in, "MBAC");
  CorrespondenceSet set;
  set.frame_i = static_cast<int>(in.get<std::uint32_t>());
  set.frame_j = static_cast<int>(in.get<std::uint32_t>());
  const auto count = in.get<std::uint64_t>();
  if (count > (std::uint64_t{1} << 40)) throw Error(ErrorCode::kDimensionOverflow, "match count too large");
  in.expect_remaining(count * 20);
  set.matches.resize(count);
  for (Correspondence& m : set.matches) {
    float v[5];
    for (float& x : v) x = in.get<float>();
    check_confidence(v[4]);
    m.src_pixel = Eigen::Vector2d(v[0], v[1]);
    m.dst_pixel = Eigen::Vector2d(v[2], v[3]);
    m.confidence = v[4];
  }
  return set;
}

std::vector<unsigned char> serialize_correspondences(const CorrespondenceSet& set) {
  if (set.frame_i < 0 || set.frame_j < 0) throw Error(ErrorCode::kInvalidArgument, "frame ids must be non-negative");
  ByteWriter out;
  out.reserve(24 + set.matches.size() * 20);
  write_header(out, "MBAC");
  out.put<std::uint32_t>(static_cast<std::uint32_t>(set.frame_i));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(set.frame_j));
  out.put<std::uint64_t>(set.matches.size());
  for (const Correspondence& m : set.matches) {
    const float c = static_cast<float>(m.confidence);
    check_confidence(c);
    out.put<float>(static_cast<float>(m.src_pixel.x()));
    out.put<float>(static_cast<float>(m.src_pixel.y()));
    out.put<float>(static_cast<float>(m.dst_pixel.x()));
    out.put<float>(static_cast<float>(m.dst_pixel.y()));
    out.put<float>(c);
  }
  return out.take();
}

DepthMap read_depth(const fs::path& path) { return parse_depth(read_file_bytes(path)); }
void write_depth(const fs::path& path, const DepthMap& depth) { write_file_bytes(path, serialize_depth(depth)); }
PointMap read_pointmap(const fs::path& path) { return parse_pointmap(read_file_bytes(path)); }
void write_pointmap(const fs::path& path, const PointMap& points) {
  write_file_bytes(path, serialize_pointmap(points));
}
CorrespondenceSet read_correspondences(const fs::path& path) {
  return parse_correspondences(read_file_bytes(path));
}
void write_correspondences(const fs::path& path, const CorrespondenceSet& set) {
  write_file_bytes(path, serialize_correspondences(set));
}

fs::path SceneManifest::resolve(const std::string& relative) const {
  const fs::path p(relative);
  return p.is_absolute() ? p : base_dir / p;
}

SceneManifest read_manifest(const fs::path& path) {
  const std::vector<unsigned char> bytes = read_file_bytes(path);
  SceneManifest m;
  m.base_dir = path.parent_path();
  try {
    const json doc = json::parse(bytes.begin(), bytes.end());
    m.shared_intrinsics = doc.value("shared_intrinsics", false);
    for (const json& f : doc.at("frames")) {
      ManifestFrame frame;
      frame.frame_id = f.at("frame_id").get<int>();
      frame.width = f.at("width").get<int>();
      frame.height = f.at("height").get<int>();
      frame.depth_path = f.at("depth_path").get<std::string>();
      if (f.contains("pointmap_path")) frame.pointmap_path = f.at("pointmap_path").get<std::string>();
      if (f.contains("intrinsics")) {
        const json& k = f.at("intrinsics");
        ManifestIntrinsics intr;
        intr.focal = k.at("focal").get<double>();
        intr.cx = k.value("cx", frame.width / 2.0);
        intr.cy = k.value("cy", frame.height / 2.0);
        frame.intrinsics = intr;
      }
      m.frames.push_back(std::move(frame));
    }
    if (doc.contains("pairs")) {
      for (const json& p : doc.at("pairs")) {
        m.pairs.push_back({p.at("i").get<int>(), p.at("j").get<int>(), p.at("correspondence_path").get<std::string>()});
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, "manifest " + path.string() + ": " + e.what());
  }

  std::set<int> ids;
  for (const ManifestFrame& f : m.frames) {
    if (!ids.insert(f.frame_id).second) {
      throw Error(ErrorCode::kParseError, "manifest: duplicate frame_id " + std::to_string(f.frame_id));
    }
    if (f.width <= 0 || f.height <= 0) throw Error(ErrorCode::kParseError, "manifest: non-positive image size");
    if (f.intrinsics && !(f.intrinsics->focal > 0.0)) {
      throw Error(ErrorCode::kParseError, "manifest: focal must be positive");
    }
  }
  for (const ManifestPair& p : m.pairs) {
    if (!ids.count(p.i) || !ids.count(p.j)) {
      throw Error(ErrorCode::kParseError, "manifest: pair references an unknown frame");
    }
  }
  return m;
}

void write_manifest(const fs::path& path, const SceneManifest& manifest) {
  json doc;
  doc["shared_intrinsics"] = manifest.shared_intrinsics;
  doc["frames"] = json::array();
  for (const ManifestFrame& f : manifest.frames) {
    json j{{"frame_id", f.frame_id}, {"width", f.width}, {"height", f.height}, {"depth_path", f.depth_path}};
    if (f.pointmap_path) j["pointmap_path"] = *f.pointmap_path;
    if (f.intrinsics) j["intrinsics"] = {{"focal", f.intrinsics->focal}, {"cx", f.intrinsics->cx}, {"cy", f.intrinsics->cy}};
    doc["frames"].push_back(j);
  }
  doc["pairs"] = json::array();
  for (const ManifestPair& p : manifest.pairs) {
    doc["pairs"].push_back({{"i", p.i}, {"j", p.j}, {"correspondence_path", p.correspondence_path}});
  }
  const std::string text = doc.dump(2) + "\n";
  write_file_bytes(path, std::vector<unsigned char>(text.begin(), text.end()));
}

ResultFrame ResultFrame::from_state(const FrameState& state, bool registered) {
  ResultFrame f;
  f.frame_id = state.frame_id;
  f.registered = registered;
  f.rotation = state.pose.rotation();
  f.translation = state.pose.translation;
  f.focal = state.intrinsics.focal;
  f.cx = state.intrinsics.principal_point.x();
  f.cy = state.intrinsics.principal_point.y();
  f.width = state.intrinsics.width;
  f.height = state.intrinsics.height;
  f.alpha = state.correction.alpha();
  f.beta = state.correction.beta;
  return f;
}

FrameState ResultFrame::to_state() const {
  FrameState s;
  s.frame_id = frame_id;
  s.intrinsics.focal = focal;
  s.intrinsics.principal_point = Eigen::Vector2d(cx, cy);
  s.intrinsics.width = width;
  s.intrinsics.height = height;
  s.pose = CameraPose::from_rotation(rotation, translation);
  s.correction = AffineDepthCorrection::from_alpha(alpha, beta);
  return s;
}

const ResultFrame* ResultDocument::find(int frame_id) const {
  for (const ResultFrame& f : frames) {
    if (f.frame_id == frame_id) return &f;
  }
  return nullptr;
}

std::string result_to_string(const ResultDocument& doc) {
  json out;
  out["frames"] = json::array();
  for (const ResultFrame& f : doc.frames) {
    json j{{"frame_id", f.frame_id}, {"registered", f.registered}, {"focal", f.focal}, {"cx", f.cx},
           {"cy", f.cy},             {"width", f.width},           {"height", f.height}};
    if (f.registered) {
      j["rotation"] = matrix_json(f.rotation);
      j["translation"] = {f.translation.x(), f.translation.y(), f.translation.z()};
      j["alpha"] = f.alpha;
      j["beta"] = f.beta;
    }
    out["frames"].push_back(j);
  }
  out["metadata"] = doc.metadata;
  return out.dump(2) + "\n";
}

ResultDocument result_from_string(const std::string& text) {
  ResultDocument doc;
  try {
    const json in = json::parse(text);
    for (const json& j : in.at("frames")) {
      ResultFrame f;
      f.frame_id = j.at("frame_id").get<int>();
      f.registered = j.at("registered").get<bool>();
      f.focal = j.at("focal").get<double>();
      f.cx = j.at("cx").get<double>();
      f.cy = j.at("cy").get<double>();
      f.width = j.at("width").get<int>();
      f.height = j.at("height").get<int>();
      if (f.registered) {
        const json& r = j.at("rotation");
        if (r.size() != 9) throw Error(ErrorCode::kParseError, "result: rotation needs 9 values");
        for (int k = 0; k < 9; ++k) f.rotation(k / 3, k % 3) = r.at(k).get<double>();
        const json& t = j.at("translation");
        if (t.size() != 3) throw Error(ErrorCode::kParseError, "result: translation needs 3 values");
        for (int k = 0; k < 3; ++k) f.translation[k] = t.at(k).get<double>();
        f.alpha = j.at("alpha").get<double>();
        f.beta = j.at("beta").get<double>();
      }
      doc.frames.push_back(f);
    }
    if (in.contains("metadata")) doc.metadata = in.at("metadata");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("result: ") + e.what());
  }
  return doc;
}

void write_result(const fs::path& path, const ResultDocument& doc) {
  const std::string text = result_to_string(doc);
  write_file_bytes(path, std::vector<unsigned char>(text.begin(), text.end()));
}

ResultDocument read_result(const fs::path& path) {
  const std::vector<unsigned char> bytes = read_file_bytes(path);
  try {
    return result_from_string(std::string(bytes.begin(), bytes.end()));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void write_histogram_csv(const fs::path& path, const ResidualHistogram& histogram) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "bin,lower,upper,count,cumulative,cdf\n";
  const double total = static_cast<double>(std::max<std::uint64_t>(histogram.total(), 1));
  for (int b = 0; b < histogram.bin_count(); ++b) {
    out << b << ',' << b * histogram.bin_width() << ',' << (b + 1) * histogram.bin_width() << ','
        << histogram.counts()[b] << ',' << histogram.cumulative()[b] << ','
        << static_cast<double>(histogram.cumulative()[b]) / total << '\n';
  }
  const std::string text = out.str();
  write_file_bytes(path, std::vector<unsigned char>(text.begin(), text.end()));
}

void export_ply(const fs::path& path, const std::map<int, FrameState>& states, const std::map<int, DepthMap>& depths,
                int stride) {
  if (stride < 1) throw Error(ErrorCode::kInvalidArgument, "ply stride must be >= 1");
  struct Vertex {
    Eigen::Vector3d p;
    double depth;
  };
  std::vector<Vertex> vertices;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& [id, state] : states) {
    const auto it = depths.find(id);
    if (it == depths.end()) continue;
    const DepthMap& d = it->second;
    const Eigen::Matrix3d rt = state.pose.rotation().transpose();
    for (int row = 0; row < d.height; row += stride) {
      for (int col = 0; col < d.width; col += stride) {
        if (!d.valid(row, col)) continue;
        const double z = state.correction.apply(d.at(row, col));
        if (!(z > 0.0)) continue;
        const Eigen::Vector2d xn = state.intrinsics.normalize(Eigen::Vector2d(col, row));
        const Eigen::Vector3d cam(xn.x() * z, xn.y() * z, z);
        vertices.push_back({rt * (cam - state.pose.translation), z});
        lo = std::min(lo, z);
        hi = std::max(hi, z);
      }
    }
  }
  std::ostringstream out;
  out << "ply\nformat ascii 1.0\nelement vertex " << vertices.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  out << std::setprecision(9);
  for (const Vertex& v : vertices) {
    const double t = hi > lo ? (v.depth - lo) / (hi - lo) : 0.5;
    const int g = static_cast<int>(std::lround(255.0 * (1.0 - t)));
    out << v.p.x() << ' ' << v.p.y() << ' ' << v.p.z() << ' ' << g << ' ' << g << ' ' << g << '\n';
  }
  const std::string text = out.str();
  write_file_bytes(path, std::vector<unsigned char>(text.begin(), text.end()));
}

}  // namespace mba
