#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hass/tensor.hpp"

namespace hass {

// AASM sleep stages with stable integer codes.
enum class SleepStage : std::uint8_t { W = 0, N1 = 1, N2 = 2, N3 = 3, REM = 4 };

inline constexpr std::size_t kStageCount = 5;
inline constexpr std::array<const char*, kStageCount> kStageNames = {"W", "N1", "N2", "N3",
                                                                     "REM"};

const char* stage_name(SleepStage s);

// One 30-second EEG epoch: a C x T x 1 signal and its stage label.
struct EpochRecord {
  Tensor signal;  // C x T x 1
  SleepStage label = SleepStage::W;
};

// Header of the HEEG1 container. All integers little-endian.
struct DatasetHeader {
  std::uint16_t channels = 0;   // C
  std::uint32_t timesteps = 0;  // T
  std::uint16_t depth = 1;      // D, fixed to 1 in v1
  std::uint32_t n_records = 0;
};

// Synthetic epoch generator spec. Each class mixes a class-specific
// sinusoidal temporal template (amplitude temporal_signature) with a
// class-specific rank-1 cross-channel pattern (strength spatial_coupling)
// plus white noise.
struct SynthSpec {
  std::size_t channels = 6;
  std::size_t timesteps = 64;
  std::size_t count = 100;
  std::uint64_t seed = 0;
  std::array<double, kStageCount> class_balance = {0.2, 0.2, 0.2, 0.2, 0.2};
  double spatial_coupling = 0.5;
  double temporal_signature = 0.5;
  double noise_std = 0.1;

  void validate() const;
};

// HEEG1 binary format: magic "HEEG1", header, all signals as float32
// little-endian row-major, then one label byte per record.
void write_dataset(const std::vector<EpochRecord>& records, const std::string& path);
std::vector<EpochRecord> read_dataset(const std::string& path);

// Byte-level variants used by the fuzz tests.
std::vector<std::uint8_t> serialize_dataset(const std::vector<EpochRecord>& records);
void write_dataset(const std::vector<EpochRecord>& records, std::ostream& out);
std::vector<EpochRecord> read_dataset_bytes(const std::vector<std::uint8_t>& bytes);

std::vector<EpochRecord> generate_synthetic(const SynthSpec& spec);

// Per-class histogram of labels, in stage-code order.
std::array<std::size_t, kStageCount> label_histogram(const std::vector<EpochRecord>& records);

}  // namespace hass
