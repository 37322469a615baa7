#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "mba/error.hpp"
#include "mba/io.hpp"
#include "test_support.hpp"

using namespace mba;

namespace {

bool same_bits(float a, float b) { return std::memcmp(&a, &b, sizeof(float)) == 0; }

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an mba::Error");
  return ErrorCode::kInvalidArgument;
}

float random_float_bits(std::mt19937_64& rng) {
  const std::uint32_t bits = static_cast<std::uint32_t>(rng());
  float f;
  std::memcpy(&f, &bits, sizeof(f));
  return f;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Eigen::Vector3d> ply_vertices(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t count = 0;
  while (std::getline(in, line) && line != "end_header") {
    if (line.rfind("element vertex ", 0) == 0) count = std::stoul(line.substr(15));
  }
  std::vector<Eigen::Vector3d> out;
  for (std::size_t k = 0; k < count; ++k) {
    Eigen::Vector3d p;
    int r, g, b;
    in >> p.x() >> p.y() >> p.z() >> r >> g >> b;
    out.push_back(p);
  }
  return out;
}

}  // namespace

TEST_CASE("depth layout and round trip") {
  DepthMap d(2, 2);
  d.values = {1.0f, 2.0f, -1.0f, std::numeric_limits<float>::quiet_NaN()};
  const auto bytes = serialize_depth(d);
  CHECK(bytes.size() == 32);
  CHECK(std::memcmp(bytes.data(), "MBAD", 4) == 0);
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[8] == 2);   // height
  CHECK(bytes[12] == 2);  // width
  const DepthMap back = parse_depth(bytes);
  REQUIRE(back.values.size() == 4);
  for (int k = 0; k < 4; ++k) CHECK(same_bits(back.values[k], d.values[k]));

  testing::TempDir dir("depth");
  write_depth(dir / "d.mbad", d);
  CHECK(read_file_bytes(dir / "d.mbad") == bytes);
}

TEST_CASE("depth header errors") {
  DepthMap d(3, 2, 1.5f);
  const auto bytes = serialize_depth(d);

  auto magic = bytes;
  std::memcpy(magic.data(), "XXXX", 4);
  CHECK(code_of([&] { parse_depth(magic); }) == ErrorCode::kBadMagic);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK(code_of([&] { parse_depth(truncated); }) == ErrorCode::kTruncatedFile);

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK(code_of([&] { parse_depth(trailing); }) == ErrorCode::kTrailingData);

  auto version = bytes;
  version[4] = 2;
  CHECK(code_of([&] { parse_depth(version); }) == ErrorCode::kUnsupportedVersion);

  auto huge = bytes;
  huge.resize(16);
  for (int k = 8; k < 16; ++k) huge[k] = 0xff;
  CHECK(code_of([&] { parse_depth(huge); }) == ErrorCode::kDimensionOverflow);

  CHECK(code_of([&] { read_depth("/nonexistent/depth.mbad"); }) == ErrorCode::kIoNotFound);
}

TEST_CASE("correspondence layout") {
  CorrespondenceSet set;
  set.frame_i = 3;
  set.frame_j = 7;
  set.matches.push_back({Eigen::Vector2d(1, 2), Eigen::Vector2d(3, 4), static_cast<double>(0.9f)});
  const auto bytes = serialize_correspondences(set);
  CHECK(bytes.size() == 24 + 20);
  const CorrespondenceSet back = parse_correspondences(bytes);
  CHECK(back.frame_i == 3);
  CHECK(back.frame_j == 7);
  REQUIRE(back.matches.size() == 1);
  CHECK(back.matches[0].src_pixel == Eigen::Vector2d(1, 2));
  CHECK(back.matches[0].dst_pixel == Eigen::Vector2d(3, 4));
  CHECK(back.matches[0].confidence == static_cast<double>(0.9f));

  CorrespondenceSet empty;
  const auto empty_bytes = serialize_correspondences(empty);
  CHECK(empty_bytes.size() == 24);
  CHECK(parse_correspondences(empty_bytes).matches.empty());

  auto bad = bytes;
  const float conf = 1.5f;
  std::memcpy(bad.data() + 24 + 16, &conf, 4);
  CHECK(code_of([&] { parse_correspondences(bad); }) == ErrorCode::kConfidenceOutOfRange);
}

TEST_CASE("random binary round trips are bit-exact") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> dim(1, 6);
  std::uniform_int_distribution<int> matches(0, 8);
  std::uniform_real_distribution<float> conf(0.0f, 1.0f);
  for (int trial = 0; trial < 10000; ++trial) {
    DepthMap d(dim(rng), dim(rng));
    for (float& v : d.values) v = random_float_bits(rng);
    const auto bytes = serialize_depth(d);
    const DepthMap back = parse_depth(bytes);
    REQUIRE(back.width == d.width);
    REQUIRE(back.height == d.height);
    for (std::size_t k = 0; k < d.values.size(); ++k) REQUIRE(same_bits(back.values[k], d.values[k]));

    CorrespondenceSet set;
    set.frame_i = static_cast<int>(rng() % 1000);
    set.frame_j = static_cast<int>(rng() % 1000);
    const int m = matches(rng);
    for (int k = 0; k < m; ++k) {
      Correspondence c;
      c.src_pixel = Eigen::Vector2d(random_float_bits(rng), random_float_bits(rng));
      c.dst_pixel = Eigen::Vector2d(random_float_bits(rng), random_float_bits(rng));
      c.confidence = conf(rng);
      set.matches.push_back(c);
    }
    const auto cbytes = serialize_correspondences(set);
    REQUIRE(serialize_correspondences(parse_correspondences(cbytes)) == cbytes);
  }
}

TEST_CASE("pointmap round trip") {
  std::mt19937_64 rng(5);
  PointMap p(4, 3);
  for (auto& v : p.points) v = Eigen::Vector3f(random_float_bits(rng), random_float_bits(rng), random_float_bits(rng));
  const auto bytes = serialize_pointmap(p);
  CHECK(bytes.size() == 16 + 4 * 3 * 12);
  CHECK(serialize_pointmap(parse_pointmap(bytes)) == bytes);
}

TEST_CASE("corrupted headers raise typed errors") {
  std::mt19937_64 rng(33);
  DepthMap d(4, 4, 2.0f);
  CorrespondenceSet set;
  set.matches.assign(3, Correspondence{Eigen::Vector2d(1, 1), Eigen::Vector2d(2, 2), 0.5});
  const std::vector<std::vector<unsigned char>> seeds{serialize_depth(d), serialize_correspondences(set),
                                                      serialize_pointmap(PointMap(2, 2))};
  int typed = 0;
  for (int trial = 0; trial < 3000; ++trial) {
    const int which = trial % 3;
    auto bytes = seeds[which];
    const int mode = static_cast<int>(rng() % 3);
    if (mode == 0) {
      const int flips = 1 + static_cast<int>(rng() % 4);
      for (int f = 0; f < flips; ++f) bytes[rng() % std::min<std::size_t>(bytes.size(), 24)] = static_cast<unsigned char>(rng());
    } else if (mode == 1) {
      bytes.resize(rng() % bytes.size());
    } else {
      bytes.push_back(static_cast<unsigned char>(rng()));
    }
    try {
      if (which == 0) parse_depth(bytes);
      if (which == 1) parse_correspondences(bytes);
      if (which == 2) parse_pointmap(bytes);
    } catch (const Error&) {
      ++typed;
    }
  }
  CHECK(typed > 0);
}

TEST_CASE("result document round trip") {
  std::mt19937_64 rng(44);
  ResultDocument doc;
  for (int id = 0; id < 5; ++id) {
    ResultFrame f = ResultFrame::from_state(testing::random_frame(rng, id), id != 3);
    doc.frames.push_back(f);
  }
  doc.metadata["seed"] = 7;
  const std::string text = result_to_string(doc);
  const ResultDocument back = result_from_string(text);
  REQUIRE(back.frames.size() == 5);
  for (int id = 0; id < 5; ++id) {
    const ResultFrame& a = doc.frames[id];
    const ResultFrame& b = back.frames[id];
    CHECK(b.registered == a.registered);
    CHECK(b.focal == a.focal);
    if (!a.registered) continue;
    CHECK(b.rotation == a.rotation);
    CHECK(b.translation == a.translation);
    CHECK(b.alpha == a.alpha);
    CHECK(b.beta == a.beta);
  }
  CHECK(result_to_string(back) == text);
  CHECK(back.metadata["seed"] == 7);

  const auto j = nlohmann::json::parse(text);
  const auto& unregistered = j["frames"][3];
  CHECK(unregistered["registered"] == false);
  CHECK_FALSE(unregistered.contains("rotation"));
  CHECK_FALSE(unregistered.contains("alpha"));

  CHECK(code_of([] { result_from_string("{not json"); }) == ErrorCode::kParseError);

  for (int trial = 0; trial < 10000; ++trial) {
    ResultDocument one;
    one.frames.push_back(ResultFrame::from_state(testing::random_frame(rng, trial), true));
    const std::string s = result_to_string(one);
    REQUIRE(result_to_string(result_from_string(s)) == s);
  }
}

TEST_CASE("manifest") {
  testing::TempDir dir("manifest");
  SceneManifest m;
  m.shared_intrinsics = true;
  m.frames.push_back({0, 8, 6, "d0.mbad", std::string("p0.mbap"), ManifestIntrinsics{100, 4, 3}});
  m.frames.push_back({1, 8, 6, "d1.mbad", std::nullopt, std::nullopt});
  m.pairs.push_back({0, 1, "c01.mbac"});
  write_manifest(dir / "manifest.json", m);
  const SceneManifest back = read_manifest(dir / "manifest.json");
  REQUIRE(back.frames.size() == 2);
  CHECK(back.shared_intrinsics);
  CHECK(back.frames[0].pointmap_path.value() == "p0.mbap");
  CHECK(back.frames[0].intrinsics->focal == 100.0);
  CHECK_FALSE(back.frames[1].intrinsics.has_value());
  CHECK(back.resolve("d1.mbad") == dir.path() / "d1.mbad");

  SceneManifest dup = m;
  dup.frames[1].frame_id = 0;
  write_manifest(dir / "dup.json", dup);
  CHECK(code_of([&] { read_manifest(dir / "dup.json"); }) == ErrorCode::kParseError);

  SceneManifest dangling = m;
  dangling.pairs[0].j = 9;
  write_manifest(dir / "dangling.json", dangling);
  CHECK(code_of([&] { read_manifest(dir / "dangling.json"); }) == ErrorCode::kParseError);

  CHECK(code_of([&] { read_manifest(dir / "missing.json"); }) == ErrorCode::kIoNotFound);
}

TEST_CASE("ply export") {
  testing::TempDir dir("ply");
  FrameState s;
  s.intrinsics = CameraIntrinsics::centered(2.0, 2, 2);
  DepthMap d(2, 2);
  d.values = {1.0f, 2.0f, 3.0f, 4.0f};
  export_ply(dir / "a.ply", {{0, s}}, {{0, d}}, 1);
  const auto v = ply_vertices(slurp(dir / "a.ply"));
  REQUIRE(v.size() == 4);
  // Hand back-projection with cx = cy = 1, f = 2.
  const std::vector<Eigen::Vector3d> expected{
      {-0.5, -0.5, 1.0}, {0.0, -1.0, 2.0}, {-1.5, 0.0, 3.0}, {0.0, 0.0, 4.0}};
  for (int k = 0; k < 4; ++k) CHECK((v[k] - expected[k]).norm() < 1e-6);

  // Translated camera with a depth correction.
  FrameState moved = s;
  moved.pose = CameraPose::from_rotation(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0, 0, -1));
  moved.correction = AffineDepthCorrection::from_alpha(2.0, 0.5);
  export_ply(dir / "b.ply", {{0, moved}}, {{0, d}}, 1);
  const auto w = ply_vertices(slurp(dir / "b.ply"));
  REQUIRE(w.size() == 4);
  CHECK((w[0] - Eigen::Vector3d(-1.25, -1.25, 3.5)).norm() < 1e-6);

  DepthMap big(4, 4, 1.0f);
  export_ply(dir / "c.ply", {{0, s}}, {{0, big}}, 2);
  CHECK(ply_vertices(slurp(dir / "c.ply")).size() == 4);

  export_ply(dir / "d.ply", {{0, s}}, {{0, d}, {1, d}}, 1);
  CHECK(ply_vertices(slurp(dir / "d.ply")).size() == 4);
}

TEST_CASE("histogram csv") {
  testing::TempDir dir("csv");
  const std::vector<double> r{0.5, 1.5, 1.6, 30.0};
  const ResidualHistogram h = build_histogram(r, 2.0, 2);
  write_histogram_csv(dir / "h.csv", h);
  const std::string text = slurp(dir / "h.csv");
  CHECK(text.rfind("bin,lower,upper,count,cumulative,cdf\n", 0) == 0);
  CHECK(text.find("\n1,1,2,2,3,") != std::string::npos);
}
