#include <doctest.h>

#include <cmath>
#include <cstring>

#include "hass/dataset.hpp"
#include "hass/model.hpp"
#include "hass/rng.hpp"

using namespace hass;

namespace {

SynthSpec small_spec() {
  SynthSpec spec;
  spec.channels = 6;
  spec.timesteps = 32;
  spec.count = 12;
  spec.seed = 4;
  return spec;
}

}  // namespace

TEST_CASE("dataset round trip is bitwise at float32 precision") {
  std::vector<EpochRecord> records = generate_synthetic(small_spec());
  const std::vector<std::uint8_t> bytes = serialize_dataset(records);
  std::vector<EpochRecord> loaded = read_dataset_bytes(bytes);
  REQUIRE(loaded.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(loaded[i].label == records[i].label);
    CHECK(loaded[i].signal.shape() == records[i].signal.shape());
    for (std::size_t j = 0; j < loaded[i].signal.size(); ++j) {
      CHECK(loaded[i].signal[j] == static_cast<double>(static_cast<float>(records[i].signal[j])));
    }
  }
  CHECK(serialize_dataset(loaded) == bytes);
}

TEST_CASE("dataset loader errors are structured and distinct") {
  std::vector<EpochRecord> records = generate_synthetic(small_spec());
  const std::vector<std::uint8_t> good = serialize_dataset(records);

  SUBCASE("empty file is a bad-magic error") {
    try {
      read_dataset_bytes({});
      FAIL("expected BadMagic");
    } catch (const DatasetError& e) {
      CHECK(e.code == DatasetError::Code::BadMagic);
    }
  }
  SUBCASE("wrong magic") {
    std::vector<std::uint8_t> bad = good;
    bad[0] = 'X';
    try {
      read_dataset_bytes(bad);
      FAIL("expected BadMagic");
    } catch (const DatasetError& e) {
      CHECK(e.code == DatasetError::Code::BadMagic);
    }
  }
  SUBCASE("truncated payload") {
    std::vector<std::uint8_t> bad(good.begin(), good.end() - 7);
    try {
      read_dataset_bytes(bad);
      FAIL("expected Truncated");
    } catch (const DatasetError& e) {
      CHECK(e.code == DatasetError::Code::Truncated);
    }
  }
  SUBCASE("trailing bytes are a size mismatch") {
    std::vector<std::uint8_t> bad = good;
    bad.push_back(0);
    try {
      read_dataset_bytes(bad);
      FAIL("expected SizeMismatch");
    } catch (const DatasetError& e) {
      CHECK(e.code == DatasetError::Code::SizeMismatch);
    }
  }
  SUBCASE("label byte out of range") {
    std::vector<std::uint8_t> bad = good;
    bad.back() = 7;
    try {
      read_dataset_bytes(bad);
      FAIL("expected LabelRange");
    } catch (const DatasetError& e) {
      CHECK(e.code == DatasetError::Code::LabelRange);
    }
  }
  SUBCASE("zero extent and unsupported depth are header errors") {
    std::vector<std::uint8_t> bad = good;
    bad[5] = 0;
    bad[6] = 0;  // C = 0
    try {
      read_dataset_bytes(bad);
      FAIL("expected BadHeader");
    } catch (const DatasetError& e) {
      CHECK(e.code == DatasetError::Code::BadHeader);
    }
    std::vector<std::uint8_t> bad_depth = good;
    bad_depth[11] = 2;  // D = 2
    try {
      read_dataset_bytes(bad_depth);
      FAIL("expected BadHeader");
    } catch (const DatasetError& e) {
      CHECK(e.code == DatasetError::Code::BadHeader);
    }
  }
}

TEST_CASE("loader survives random and mutated byte streams") {
  std::vector<EpochRecord> records = generate_synthetic(small_spec());
  const std::vector<std::uint8_t> good = serialize_dataset(records);
  RngStream rng(71);
  int parsed = 0, rejected = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::uint8_t> bytes;
    if (trial % 2 == 0) {
      bytes.resize(rng.index(128));
      for (auto& b : bytes) b = static_cast<std::uint8_t>(rng.index(256));
    } else {
      bytes = good;
      const std::size_t flips = 1 + rng.index(8);
      for (std::size_t f = 0; f < flips; ++f) {
        bytes[rng.index(bytes.size())] ^= static_cast<std::uint8_t>(1 + rng.index(255));
      }
      if (rng.index(3) == 0) bytes.resize(rng.index(bytes.size() + 1));
    }
    try {
      read_dataset_bytes(bytes);
      ++parsed;
    } catch (const DatasetError&) {
      ++rejected;
    }
  }
  CHECK(parsed + rejected == 500);
  CHECK(rejected > 0);
}

TEST_CASE("synthetic generation is seed deterministic") {
  SynthSpec spec = small_spec();
  std::vector<EpochRecord> a = generate_synthetic(spec);
  std::vector<EpochRecord> b = generate_synthetic(spec);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].label == b[i].label);
    CHECK(std::memcmp(a[i].signal.data(), b[i].signal.data(),
                      a[i].signal.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("noiseless pure-temporal records of one class share a waveform") {
  SynthSpec spec = small_spec();
  spec.count = 40;
  spec.noise_std = 0.0;
  spec.spatial_coupling = 0.0;
  spec.temporal_signature = 1.0;
  std::vector<EpochRecord> records = generate_synthetic(spec);
  const EpochRecord* first_of[kStageCount] = {};
  for (const EpochRecord& r : records) {
    const std::size_t k = static_cast<std::size_t>(r.label);
    if (!first_of[k]) {
      first_of[k] = &r;
      continue;
    }
    CHECK(std::memcmp(r.signal.data(), first_of[k]->signal.data(),
                      r.signal.size() * sizeof(double)) == 0);
    // all channels carry the same template
    for (std::size_t c = 1; c < spec.channels; ++c) {
      for (std::size_t t = 0; t < spec.timesteps; ++t) {
        CHECK(r.signal.at(c, t, 0) == r.signal.at(0, t, 0));
      }
    }
  }
}

TEST_CASE("degenerate class balance yields a single label") {
  SynthSpec spec = small_spec();
  spec.count = 100;
  spec.class_balance = {1, 0, 0, 0, 0};
  std::vector<EpochRecord> records = generate_synthetic(spec);
  const auto hist = label_histogram(records);
  CHECK(hist[0] == 100);
  for (std::size_t k = 1; k < kStageCount; ++k) CHECK(hist[k] == 0);
}

TEST_CASE("spec validation rejects malformed generator settings") {
  SynthSpec spec = small_spec();
  spec.channels = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = small_spec();
  spec.class_balance = {0.5, 0.5, 0.5, 0, 0};
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = small_spec();
  spec.noise_std = -0.1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = small_spec();
  spec.spatial_coupling = 1.5;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("writer rejects heterogeneous or empty record sets") {
  CHECK_THROWS_AS(serialize_dataset({}), ConfigError);
  std::vector<EpochRecord> records = generate_synthetic(small_spec());
  records.push_back(EpochRecord{Tensor({3, 3, 1}), SleepStage::W});
  CHECK_THROWS_AS(serialize_dataset(records), ConfigError);
}

// Learnability guard: the acceptance-style synthetic task must be solvable
// by a plain linear probe on raw flattened signals.
TEST_CASE("linear probe separates the synthetic classes") {
  SynthSpec spec;
  spec.channels = 6;
  spec.timesteps = 64;
  spec.count = 400;
  spec.seed = 7;
  spec.temporal_signature = 1.0;
  spec.spatial_coupling = 1.0;
  spec.noise_std = 0.1;
  std::vector<EpochRecord> train_records = generate_synthetic(spec);
  spec.seed = 1007;
  spec.count = 200;
  std::vector<EpochRecord> eval_records = generate_synthetic(spec);

  ClassifierParams head = init_head(HeadKind::Linear, 6, 64, 1, 77);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 32;
  cfg.seed = 7;
  train(train_records, cfg, nullptr, head);

  std::vector<SleepStage> preds = predict(eval_records, nullptr, head);
  CHECK(accuracy_against(eval_records, preds) >= 0.8);
}
