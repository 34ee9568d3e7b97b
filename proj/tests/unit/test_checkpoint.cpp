#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "oracles.hpp"
#include "voxcast/checkpoint.hpp"

using namespace voxcast;
namespace fs = std::filesystem;

TEST_CASE("classifier checkpoint round-trips bytes and predictions") {
  Classifier<float> clf(ClassifierConfig::reduced(), 12);
  Checkpoint c;
  c.kind = ModelKind::Classifier;
  c.type = PlaceholderType::E;
  c.config = encode_config(clf.config());
  c.meta = {{"label", "classifier"}};
  c.tensors = capture(clf.params());
  c.seed = 77;
  c.epoch = 4;

  std::stringstream ss;
  write_checkpoint(ss, c);
  CHECK(ss.str().substr(0, 4) == "VFCK");
  const auto back = read_checkpoint(ss);
  CHECK(back == c);
  CHECK(checkpoint_bytes(back) == checkpoint_bytes(c));

  auto loaded = load_classifier<float>(back);
  Rng rng(1);
  Tensor<float> x({2, 1, 32, 32, 64});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform() < 0.1f ? 1.0f : 0.0f;
  CHECK(loaded.forward(x, nn::Mode::Eval) == clf.forward(x, nn::Mode::Eval));

  SUBCASE("kind mismatch") { CHECK_THROWS_AS(load_simulator<float>(back), Error); }
  SUBCASE("truncated stream") {
    const auto bytes = ss.str();
    std::stringstream cut(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(read_checkpoint(cut), Error);
  }
  SUBCASE("bad magic") {
    std::stringstream bad("VFXX0000");
    CHECK_THROWS_AS(read_checkpoint(bad), Error);
  }
}

TEST_CASE("config encodings decode to equal configurations") {
  auto s = SimulatorConfig::reduced();
  s.alpha = 0.1;
  s.tied_encoders = true;
  s.output_shift = -2.5;
  const auto d = decode_simulator_config(encode_config(s));
  CHECK(d.encoder_channels == s.encoder_channels);
  CHECK(d.decoder_channels == s.decoder_channels);
  CHECK(d.alpha == s.alpha);
  CHECK(d.tied_encoders);
  CHECK(d.output_shift == -2.5);
  CHECK(d.encoder_blocks.size() == 5);
  CHECK(d.decoder_blocks[2].stride == 2);

  const auto c = decode_classifier_config(encode_config(ClassifierConfig::reduced()));
  CHECK(c.channels == ClassifierConfig::reduced().channels);
  CHECK(c.fc_hidden == ClassifierConfig::reduced().fc_hidden);
  CHECK_THROWS_AS(decode_classifier_config({{"channels", "x"}}), Error);
}

TEST_CASE("simulator checkpoint restores the same outputs") {
  Simulator<float> sim(SimulatorConfig::reduced(), 4);
  Checkpoint c;
  c.kind = ModelKind::Simulator;
  c.config = encode_config(sim.config());
  c.tensors = capture(sim.params());
  auto loaded = load_simulator<float>(c);
  Rng rng(6);
  Tensor<float> g({1, 1, 32, 32, 64});
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = rng.uniform() < 0.1f ? 1.0f : 0.0f;
  const std::vector<Tensor<float>> hist(4, g);
  CHECK(loaded.forward(hist, nn::Mode::Eval) == sim.forward(hist, nn::Mode::Eval));
}

TEST_CASE("named tensors convert between precisions") {
  Rng rng(2);
  const auto t = oracle::random_tensor({3, 4}, rng);
  const auto nt = NamedTensor::from("w", t);
  CHECK(nt.dtype == DType::F64);
  CHECK(nt.to_tensor<double>() == t);
  const auto f = nt.to_tensor<float>();
  CHECK(f[5] == static_cast<float>(t[5]));
}

TEST_CASE("missing checkpoint file") {
  const auto p = fs::temp_directory_path() / "voxcast_unit_absent.vfck";
  fs::remove(p);
  try {
    load_checkpoint(p);
    FAIL("expected MissingCheckpoint");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingCheckpoint);
  }
}
