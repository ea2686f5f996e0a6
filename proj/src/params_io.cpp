#include "hass/params_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace hass {

namespace {

constexpr char kMagic[] = {'H', 'A', 'S', 'S', 'P', 'R', 'M'};
constexpr std::size_t kMagicLen = 7;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

struct Cursor {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  std::size_t remaining() const { return bytes.size() - pos; }

  void need(std::size_t n, const char* what) {
    if (remaining() < n) {
      throw ParamsError(ParamsError::Code::Truncated,
                        std::string("params file truncated while reading ") + what);
    }
  }

  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
    pos += 2;
    return v;
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes[pos++];
  }

  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
};

}  // namespace

std::vector<std::uint8_t> serialize_params(const NamedTensors& tensors) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + kMagicLen);
  put_u16(out, kParamsFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<std::uint8_t>(tensor.rank()));
    for (std::size_t axis = 0; axis < tensor.rank(); ++axis) {
      put_u32(out, static_cast<std::uint32_t>(tensor.extent(axis)));
    }
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      put_f32(out, static_cast<float>(tensor[i]));
    }
  }
  return out;
}

NamedTensors deserialize_params(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kMagicLen || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) {
    throw ParamsError(ParamsError::Code::BadMagic, "not a HASSPRM file");
  }
  Cursor cur{bytes, kMagicLen};
  const std::uint16_t version = cur.u16("version");
  if (version != kParamsFormatVersion) {
    throw ParamsError(ParamsError::Code::BadVersion,
                      "unsupported params format version " + std::to_string(version));
  }
  const std::uint32_t count = cur.u32("tensor count");
  NamedTensors result;
  result.reserve(count);
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint16_t name_len = cur.u16("name length");
    cur.need(name_len, "tensor name");
    std::string name(reinterpret_cast<const char*>(bytes.data() + cur.pos), name_len);
    cur.pos += name_len;
    const std::uint8_t rank = cur.u8("rank");
    if (rank < 1 || rank > 3) {
      throw ParamsError(ParamsError::Code::BadTensor,
                        "tensor '" + name + "' has unsupported rank " + std::to_string(rank));
    }
    std::vector<std::size_t> shape;
    unsigned __int128 numel = 1;
    for (std::uint8_t axis = 0; axis < rank; ++axis) {
      const std::uint32_t e = cur.u32("extent");
      if (e == 0) {
        throw ParamsError(ParamsError::Code::BadTensor, "tensor '" + name + "' has a zero extent");
      }
      shape.push_back(e);
      numel *= e;
    }
    if (numel * 4 > cur.remaining()) {
      throw ParamsError(ParamsError::Code::Truncated,
                        "params file truncated in payload of tensor '" + name + "'");
    }
    std::vector<double> data(static_cast<std::size_t>(numel));
    for (auto& v : data) v = static_cast<double>(cur.f32("payload"));
    result.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (cur.remaining() != 0) {
    throw ParamsError(ParamsError::Code::BadTensor,
                      std::to_string(cur.remaining()) + " trailing bytes after last tensor");
  }
  return result;
}

void write_params_file(const NamedTensors& tensors, const std::string& path) {
  const std::vector<std::uint8_t> bytes = serialize_params(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

NamedTensors read_params_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_params(bytes);
}

}  // namespace hass
