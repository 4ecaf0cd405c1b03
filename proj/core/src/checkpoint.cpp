#include "sppe/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "sppe/errors.hpp"

namespace sppe {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'P', 'E'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void write_le(std::ostream& out, U value) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U read_le(std::istream& in) {
  unsigned char buf[sizeof(U)];
  in.read(reinterpret_cast<char*>(buf), sizeof(U));
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(buf[i]) << (8 * i);
  }
  return value;
}

void write_f32_le(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_le<std::uint32_t>(out, bits);
}

float read_f32_le(std::istream& in) {
  const std::uint32_t bits = read_le<std::uint32_t>(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

const CheckpointTensor& Checkpoint::get(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw DataError("checkpoint: no tensor named " + name);
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return true;
  return false;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot write " + path.string());
  out.write(kMagic, 4);
  write_le<std::uint32_t>(out, kVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const CheckpointTensor& t : ckpt.tensors) {
    if (t.name.size() > 0xffff) {
      throw DataError("checkpoint: tensor name too long: " + t.name);
    }
    write_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    write_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
    std::uint64_t numel = 1;
    for (const std::uint64_t d : t.dims) {
      write_le<std::uint64_t>(out, d);
      numel *= d;
    }
    if (numel != t.data.size()) {
      throw DataError("checkpoint: tensor " + t.name + " dims hold " +
                      std::to_string(numel) + " values, data has " +
                      std::to_string(t.data.size()));
    }
    for (const float v : t.data) write_f32_le(out, v);
  }
  write_le<std::uint64_t>(out, ckpt.step);
  if (!out) throw DataError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("checkpoint: " + path.string() + ": bad magic");
  }
  const std::uint32_t version = read_le<std::uint32_t>(in);
  if (version != kVersion) {
    throw DataError("checkpoint: " + path.string() + ": unsupported version " +
                    std::to_string(version));
  }
  const std::uint32_t count = read_le<std::uint32_t>(in);
  Checkpoint ckpt;
  ckpt.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const std::uint16_t name_len = read_le<std::uint16_t>(in);
    t.name.resize(name_len);
    in.read(t.name.data(), name_len);
    const std::uint8_t rank = read_le<std::uint8_t>(in);
    std::uint64_t numel = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      t.dims.push_back(read_le<std::uint64_t>(in));
      numel *= t.dims.back();
    }
    if (!in) throw DataError("checkpoint: " + path.string() + ": truncated header");
    t.data.resize(numel);
    for (std::uint64_t j = 0; j < numel; ++j) t.data[j] = read_f32_le(in);
    if (!in) {
      throw DataError("checkpoint: " + path.string() + ": truncated tensor " +
                      t.name);
    }
    for (const auto& existing : ckpt.tensors) {
      if (existing.name == t.name) {
        throw DataError("checkpoint: " + path.string() + ": duplicate tensor " +
                        t.name);
      }
    }
    ckpt.tensors.push_back(std::move(t));
  }
  ckpt.step = read_le<std::uint64_t>(in);
  if (!in) throw DataError("checkpoint: " + path.string() + ": truncated step");
  return ckpt;
}

Checkpoint swa_average(const std::vector<Checkpoint>& checkpoints) {
  if (checkpoints.empty()) {
    throw std::invalid_argument("swa_average: need at least one checkpoint");
  }
  const Checkpoint& first = checkpoints[0];
  Checkpoint avg;
  avg.step = first.step;
  for (const Checkpoint& c : checkpoints) {
    if (c.tensors.size() != first.tensors.size()) {
      throw DataError("swa_average: checkpoints disagree on tensor count");
    }
    avg.step = std::max(avg.step, c.step);
  }
  const double inv = 1.0 / static_cast<double>(checkpoints.size());
  for (std::size_t ti = 0; ti < first.tensors.size(); ++ti) {
    CheckpointTensor out;
    out.name = first.tensors[ti].name;
    out.dims = first.tensors[ti].dims;
    out.data.resize(first.tensors[ti].data.size());
    for (const Checkpoint& c : checkpoints) {
      const CheckpointTensor& t = c.tensors[ti];
      if (t.name != out.name || t.dims != out.dims) {
        throw DataError("swa_average: tensor mismatch at " + out.name + " vs " +
                        t.name);
      }
    }
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      double acc = 0.0;
      for (const Checkpoint& c : checkpoints) {
        acc += static_cast<double>(c.tensors[ti].data[i]);
      }
      out.data[i] = static_cast<float>(acc * inv);
    }
    avg.tensors.push_back(std::move(out));
  }
  return avg;
}

}  // namespace sppe
