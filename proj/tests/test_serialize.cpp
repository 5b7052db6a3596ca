#include <cstring>
#include <filesystem>
#include <random>

#include "amam/serialize.hpp"
#include "doctest.h"

using namespace amam;
namespace fs = std::filesystem;

namespace {

bool bits_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.numel() * sizeof(double)) == 0;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("amam_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("AMTN write/read is bit-exact on float-valued tensors") {
  TempDir dir;
  std::mt19937_64 rng(600);
  for (int i = 0; i < 20; ++i) {
    std::uniform_int_distribution<int> dim(1, 6);
    Tensor t = Tensor::uniform(Shape{dim(rng), dim(rng), dim(rng), dim(rng)}, -100.0, 100.0, rng);
    const fs::path file = dir.path / ("t" + std::to_string(i) + ".amtn");
    write_amtn(file, t);
    CHECK(bits_equal(read_amtn(file), t));
  }
}

TEST_CASE("AMTN byte layout is frozen") {
  TempDir dir;
  const fs::path file = dir.path / "frozen.amtn";
  write_amtn(file, Tensor::from_vector(Shape{2, 1, 1, 1}, {1.0, -2.0}));
  const std::string bytes = read_text_file(file);
  const unsigned char expect[] = {'A', 'M', 'T', 'N', 0x01,
                                  2, 0, 0, 0,  1, 0, 0, 0,  1, 0, 0, 0,  1, 0, 0, 0,
                                  0x00, 0x00, 0x80, 0x3f,   // 1.0f little-endian
                                  0x00, 0x00, 0x00, 0xc0};  // -2.0f little-endian
  REQUIRE(bytes.size() == sizeof(expect));
  CHECK(std::memcmp(bytes.data(), expect, sizeof(expect)) == 0);
}

TEST_CASE("AMTN rejects malformed files, naming the path") {
  TempDir dir;
  const fs::path bad_magic = dir.path / "bad_magic.amtn";
  write_text_file(bad_magic, "NOPE\x01xxxxxxxxxxxxxxxxxxxx");
  CHECK_THROWS_WITH_AS(read_amtn(bad_magic), doctest::Contains("bad_magic.amtn"), IoError);

  const fs::path valid = dir.path / "valid.amtn";
  write_amtn(valid, Tensor::from_vector(Shape{1, 1, 1, 4}, {1, 2, 3, 4}));
  std::string bytes = read_text_file(valid);

  const fs::path truncated = dir.path / "truncated.amtn";
  write_text_file(truncated, bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_amtn(truncated), IoError);

  const fs::path bad_version = dir.path / "bad_version.amtn";
  bytes[4] = 0x02;
  write_text_file(bad_version, bytes);
  CHECK_THROWS_WITH_AS(read_amtn(bad_version), doctest::Contains("version"), IoError);

  CHECK_THROWS_AS(read_amtn(dir.path / "missing.amtn"), IoError);
}

TEST_CASE("config JSON round trip and validation") {
  AmamConfig cfg;
  cfg.levels = {16, 32, 64};
  cfg.heads = 8;
  cfg.fusion_mode = FusionMode::Concat;
  cfg.enabled_me = false;
  cfg.seed = 1234;
  AmamConfig back = config_from_json_text(config_to_json(cfg));
  CHECK(back.levels == cfg.levels);
  CHECK(back.heads == cfg.heads);
  CHECK(back.fusion_mode == cfg.fusion_mode);
  CHECK(back.enabled_me == cfg.enabled_me);
  CHECK(back.enabled_aa == cfg.enabled_aa);
  CHECK(back.seed == cfg.seed);

  CHECK_THROWS_AS(config_from_json_text("not json"), ConfigError);
  CHECK_THROWS_AS(config_from_json_text(R"({"fusion_mode":"blend"})"), ConfigError);
  CHECK_THROWS_AS(config_from_json_text(R"({"levels":[32,48]})"), ConfigError);
  CHECK_THROWS_AS(config_from_json_text(R"({"heads":3})"), ConfigError);
}

TEST_CASE("parameter container round-trips the full module stack") {
  TempDir dir;
  AmamConfig cfg;
  cfg.levels = {4, 8};
  cfg.heads = 2;
  cfg.fusion_mode = FusionMode::Concat;  // exercises the boundary projections
  cfg.seed = 11;
  AmamParams params = AmamParams::init(cfg);
  // a non-default logit value must survive the decimal-string manifest
  params.aa[0].alpha_logits[0].data()[0] = -0.376128945;
  save_amam_params(dir.path, cfg, params);
  AmamParams loaded = load_amam_params(dir.path, cfg);

  REQUIRE(loaded.me.size() == params.me.size());
  REQUIRE(loaded.aa.size() == params.aa.size());
  CHECK(bits_equal(loaded.me[0].cbr_cur.kernel, params.me[0].cbr_cur.kernel));
  CHECK(bits_equal(loaded.me[1].cbr_fuse.kernel, params.me[1].cbr_fuse.kernel));
  CHECK(loaded.me[0].cbr_cur.act == Activation::ReLU);
  CHECK(loaded.me[0].cbr_fuse.padding == params.me[0].cbr_fuse.padding);
  CHECK(loaded.aa[0].d_qk == params.aa[0].d_qk);
  CHECK(loaded.aa[0].fusion == FusionMode::Concat);
  CHECK(bits_equal(loaded.aa[0].head[1].w_v, params.aa[0].head[1].w_v));
  CHECK(bits_equal(loaded.aa[1].w_p, params.aa[1].w_p));
  CHECK(loaded.aa[0].concat_fuse.size() == 1);
  CHECK(loaded.aa[0].alpha_logits[0].item() == params.aa[0].alpha_logits[0].item());
  CHECK(loaded.me[0].cbr_cur.kernel.requires_grad());
  CHECK_FALSE(loaded.me[0].cbr_cur.bn_mean.requires_grad());

  // forwards through saved and loaded parameters agree bit-for-bit
  std::mt19937_64 rng(602);
  Tensor x = Tensor::uniform(Shape{1, 4, 4, 4}, -1, 1, rng);
  CHECK(bits_equal(aa_forward(x, params.aa[0]), aa_forward(x, loaded.aa[0])));
}

TEST_CASE("detection JSON parses, validates, and round-trips") {
  const std::string text = R"({"images":[
    {"id":"scene-1","gt":[[0,0,4,4],[5,5,9,9]],"det":[[0,0,4,4,0.875],[5,5,8,9,0.5]]},
    {"id":"scene-2","gt":[],"det":[]}
  ]})";
  EvalData data = detections_from_json_text(text);
  REQUIRE(data.size() == 2);
  CHECK(data[0].id == "scene-1");
  CHECK(data[0].gt.size() == 2);
  CHECK(data[0].det[0].score == 0.875);
  CHECK(data[0].det[0].image_id == "scene-1");

  EvalData back = detections_from_json_text(detections_to_json(data));
  REQUIRE(back.size() == 2);
  CHECK(back[0].det[1].box.x_max == 8.0);
  CHECK(back[0].det[1].score == 0.5);

  CHECK_THROWS_AS(detections_from_json_text("[]"), ConfigError);
  CHECK_THROWS_AS(detections_from_json_text(R"({"images":[{"gt":[]}]})"), ConfigError);
  CHECK_THROWS_AS(
      detections_from_json_text(R"({"images":[{"id":"x","det":[[0,0,1,1]]}]})"),
      ConfigError);  // det needs 5 entries
  CHECK_THROWS_AS(
      detections_from_json_text(R"({"images":[{"id":"x","det":[[0,0,1,1,1.5]]}]})"),
      ConfigError);  // score out of range
  CHECK_THROWS_AS(
      detections_from_json_text(R"({"images":[{"id":"x","gt":[[2,0,1,1]]}]})"),
      ConfigError);  // degenerate box
}

TEST_CASE("report JSON uses fixed six-decimal formatting") {
  EvalReport report;
  report.precision = 0.75;
  report.recall = 1.0;
  report.ap_50 = 1.0;
  report.ap_50_95 = 0.5;
  for (int i = 0; i < 10; ++i) report.ap_per_threshold[i] = i <= 4 ? 1.0 : 0.0;
  const std::string text = report_to_json(report);
  CHECK(text.find("\"precision\": 0.750000") != std::string::npos);
  CHECK(text.find("\"recall\": 1.000000") != std::string::npos);
  CHECK(text.find("\"ap_50_95\": 0.500000") != std::string::npos);
  CHECK(text.find("1.000000, 1.000000, 1.000000, 1.000000, 1.000000, 0.000000") !=
        std::string::npos);
}

TEST_CASE("nine-significant-digit CSV numbers") {
  CHECK(format_sig9(0.01) == "0.01");
  CHECK(format_sig9(1.0 / 3.0) == "0.333333333");
  CHECK(format_sig9(123456789.0) == "123456789");
}
