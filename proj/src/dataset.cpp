#include "hass/dataset.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "hass/rng.hpp"

namespace hass {

namespace {

constexpr char kMagic[] = {'H', 'E', 'E', 'G', '1'};
constexpr std::size_t kMagicLen = 5;
constexpr std::size_t kHeaderLen = kMagicLen + 2 + 4 + 2 + 4;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

constexpr double kTwoPi = 6.283185307179586476925286766559;

}  // namespace

const char* stage_name(SleepStage s) { return kStageNames[static_cast<std::size_t>(s)]; }

void SynthSpec::validate() const {
  if (channels == 0 || channels > std::numeric_limits<std::uint16_t>::max()) {
    throw ConfigError("synth: channels must be in [1, 65535], got " + std::to_string(channels));
  }
  if (timesteps == 0) throw ConfigError("synth: timesteps must be >= 1");
  if (count == 0) throw ConfigError("synth: record count must be >= 1");
  if (noise_std < 0.0) throw ConfigError("synth: noise_std must be >= 0");
  if (spatial_coupling < 0.0 || spatial_coupling > 1.0) {
    throw ConfigError("synth: spatial_coupling must lie in [0, 1]");
  }
  if (temporal_signature < 0.0 || temporal_signature > 1.0) {
    throw ConfigError("synth: temporal_signature must lie in [0, 1]");
  }
  double sum = 0.0;
  for (double p : class_balance) {
    if (p < 0.0) throw ConfigError("synth: class balance entries must be >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("synth: class balance must sum to 1, got " + std::to_string(sum));
  }
}

std::vector<std::uint8_t> serialize_dataset(const std::vector<EpochRecord>& records) {
  if (records.empty()) throw ConfigError("cannot write a dataset with no records");
  const Tensor& first = records.front().signal;
  if (first.rank() != 3 || first.extent(2) != 1) {
    throw ConfigError("dataset records must be C x T x 1, got " + first.shape_str());
  }
  const std::size_t c = first.extent(0), t = first.extent(1);
  if (c > std::numeric_limits<std::uint16_t>::max()) {
    throw ConfigError("dataset channels exceed format limit");
  }
  if (t > std::numeric_limits<std::uint32_t>::max() ||
      records.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw ConfigError("dataset extents exceed format limits");
  }
  for (const EpochRecord& r : records) {
    if (r.signal.rank() != 3 || r.signal.extent(0) != c || r.signal.extent(1) != t ||
        r.signal.extent(2) != 1) {
      throw ConfigError("dataset records must share one C x T x 1 shape; found " +
                        r.signal.shape_str() + " after " + std::to_string(c) + "x" +
                        std::to_string(t) + "x1");
    }
  }
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderLen + records.size() * (c * t * 4 + 1));
  out.insert(out.end(), kMagic, kMagic + kMagicLen);
  put_u16(out, static_cast<std::uint16_t>(c));
  put_u32(out, static_cast<std::uint32_t>(t));
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const EpochRecord& r : records) {
    for (std::size_t i = 0; i < r.signal.size(); ++i) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(r.signal[i])));
    }
  }
  for (const EpochRecord& r : records) {
    out.push_back(static_cast<std::uint8_t>(r.label));
  }
  return out;
}

void write_dataset(const std::vector<EpochRecord>& records, std::ostream& out) {
  const std::vector<std::uint8_t> bytes = serialize_dataset(records);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void write_dataset(const std::vector<EpochRecord>& records, const std::string& path) {
  const std::vector<std::uint8_t> bytes = serialize_dataset(records);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

std::vector<EpochRecord> read_dataset_bytes(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kMagicLen || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) {
    throw DatasetError(DatasetError::Code::BadMagic, "not a HEEG1 file");
  }
  if (bytes.size() < kHeaderLen) {
    throw DatasetError(DatasetError::Code::Truncated, "file ends inside the header");
  }
  DatasetHeader header;
  header.channels = get_u16(bytes.data() + kMagicLen);
  header.timesteps = get_u32(bytes.data() + kMagicLen + 2);
  header.depth = get_u16(bytes.data() + kMagicLen + 6);
  header.n_records = get_u32(bytes.data() + kMagicLen + 8);
  if (header.channels == 0 || header.timesteps == 0) {
    throw DatasetError(DatasetError::Code::BadHeader, "header declares a zero extent");
  }
  if (header.depth != 1) {
    throw DatasetError(DatasetError::Code::BadHeader,
                       "unsupported depth " + std::to_string(header.depth) + " (v1 requires 1)");
  }
  const unsigned __int128 signal_elems = static_cast<unsigned __int128>(header.channels) *
                                         header.timesteps * header.depth;
  const unsigned __int128 expected = kHeaderLen +
                                     static_cast<unsigned __int128>(header.n_records) *
                                         (signal_elems * 4) +
                                     header.n_records;
  if (static_cast<unsigned __int128>(bytes.size()) < expected) {
    throw DatasetError(DatasetError::Code::Truncated,
                       "file shorter than the header-declared payload");
  }
  if (static_cast<unsigned __int128>(bytes.size()) > expected) {
    std::ostringstream msg;
    msg << "payload length mismatch: header implies " << static_cast<std::uint64_t>(expected)
        << " bytes, file has " << bytes.size();
    throw DatasetError(DatasetError::Code::SizeMismatch, msg.str());
  }

  const std::size_t per_record = static_cast<std::size_t>(signal_elems);
  std::vector<EpochRecord> records(header.n_records);
  std::size_t pos = kHeaderLen;
  for (std::uint32_t r = 0; r < header.n_records; ++r) {
    std::vector<double> data(per_record);
    for (std::size_t i = 0; i < per_record; ++i) {
      data[i] = static_cast<double>(std::bit_cast<float>(get_u32(bytes.data() + pos)));
      pos += 4;
    }
    records[r].signal = Tensor({header.channels, header.timesteps, 1}, std::move(data));
  }
  for (std::uint32_t r = 0; r < header.n_records; ++r) {
    const std::uint8_t lab = bytes[pos++];
    if (lab > 4) {
      throw DatasetError(DatasetError::Code::LabelRange,
                         "record " + std::to_string(r) + " has label byte " +
                             std::to_string(lab) + " > 4");
    }
    records[r].label = static_cast<SleepStage>(lab);
  }
  return records;
}

std::vector<EpochRecord> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return read_dataset_bytes(bytes);
}

std::vector<EpochRecord> generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  RngStream rng = RngStream::derive(spec.seed, "synth");

  // Class k mixes a sinusoid of 2(k+1) cycles per epoch with a rank-1
  // cross-channel pattern u_k w_k^T carrying a neighbouring frequency.
  const double c_count = static_cast<double>(spec.channels);
  const double t_count = static_cast<double>(spec.timesteps);
  std::array<double, kStageCount> cum{};
  double acc = 0.0;
  for (std::size_t k = 0; k < kStageCount; ++k) {
    acc += spec.class_balance[k];
    cum[k] = acc;
  }
  cum[kStageCount - 1] = 1.0;

  std::vector<EpochRecord> records;
  records.reserve(spec.count);
  for (std::size_t r = 0; r < spec.count; ++r) {
    const double draw = rng.uniform01();
    std::size_t k = 0;
    while (k + 1 < kStageCount && draw >= cum[k]) ++k;

    const double f_temporal = 2.0 * static_cast<double>(k + 1);
    const double f_spatial = f_temporal + 1.0;
    Tensor signal({spec.channels, spec.timesteps, 1});
    for (std::size_t c = 0; c < spec.channels; ++c) {
      // DCT-style channel loading: orthogonal across classes.
      const double u = std::cos(M_PI * static_cast<double>(k + 1) *
                                (2.0 * static_cast<double>(c) + 1.0) / (2.0 * c_count));
      for (std::size_t t = 0; t < spec.timesteps; ++t) {
        const double phase = static_cast<double>(t) / t_count;
        const double temporal = std::sin(kTwoPi * f_temporal * phase);
        const double spatial = u * std::sin(kTwoPi * f_spatial * phase);
        signal.at(c, t, 0) = spec.temporal_signature * temporal +
                             spec.spatial_coupling * spatial + spec.noise_std * rng.normal();
      }
    }
    records.push_back(EpochRecord{std::move(signal), static_cast<SleepStage>(k)});
  }
  return records;
}

std::array<std::size_t, kStageCount> label_histogram(const std::vector<EpochRecord>& records) {
  std::array<std::size_t, kStageCount> hist{};
  for (const EpochRecord& r : records) ++hist[static_cast<std::size_t>(r.label)];
  return hist;
}

}  // namespace hass
