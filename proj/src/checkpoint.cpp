#include "cfdepth/train/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "cfdepth/errors.hpp"
#include "cfdepth/fileio.hpp"

CFDEPTH_BEGIN_NAMESPACE

namespace {

constexpr char kMagic[4] = {'C', 'F', 'D', 'M'};
constexpr std::size_t kChecksumBytes = 8;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void shape(const Shape& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    for (auto d : s) u32(static_cast<std::uint32_t>(d));
  }
  void values(const Tensor& t) {
    for (Real v : t.data()) u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

struct OutOfBytes {};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw OutOfBytes{};
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Shape shape() {
    const auto rank = u32();
    need(std::size_t{rank} * 4);
    Shape s(rank);
    for (auto& d : s) d = u32();
    return s;
  }
  Tensor values(Shape shape) {
    const auto count = shape_numel(shape);
    if (count > (b_.size() - pos_) / 4) throw OutOfBytes{};
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < count; ++i) t[i] = static_cast<Real>(std::bit_cast<float>(u32()));
    return t;
  }
  bool at_end() const { return pos_ == b_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

// Parses everything before the checksum. Magic/version are returned unchecked.
Checkpoint parse_body(std::span<const std::uint8_t> body, char magic[4]) {
  if (body.size() < 4) throw OutOfBytes{};
  std::memcpy(magic, body.data(), 4);
  Reader rr(body.subspan(4));
  Checkpoint ckpt;
  ckpt.version = rr.u32();
  ckpt.phase = rr.u32();
  ckpt.iteration = rr.u64();
  ckpt.config = rr.str();
  const auto n_tensors = rr.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    NamedTensor nt;
    nt.name = rr.str();
    nt.value = rr.values(rr.shape());
    ckpt.tensors.push_back(std::move(nt));
  }
  const auto n_opt = rr.u32();
  for (std::uint32_t i = 0; i < n_opt; ++i) {
    OptimizerEntry e;
    e.name = rr.str();
    e.step = rr.u64();
    const Shape s = rr.shape();
    e.m = rr.values(s);
    e.v = rr.values(s);
    ckpt.optimizer.push_back(std::move(e));
  }
  if (!rr.at_end()) throw CheckpointFormatError("checkpoint has " + std::to_string(body.size() - 4 - rr.pos()) +
                                                " trailing bytes before the checksum");
  return ckpt;
}

}  // namespace

const NamedTensor* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(ckpt.version);
  w.u32(ckpt.phase);
  w.u64(ckpt.iteration);
  w.str(ckpt.config);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    w.str(t.name);
    w.shape(t.value.shape());
    w.values(t.value);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.optimizer.size()));
  for (const auto& e : ckpt.optimizer) {
    if (e.m.shape() != e.v.shape()) throw ContractError("optimizer moments of '" + e.name + "' differ in shape");
    w.str(e.name);
    w.u64(e.step);
    w.shape(e.m.shape());
    w.values(e.m);
    w.values(e.v);
  }
  w.u64(fnv1a64(w.buffer()));
  return std::move(w.buffer());
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 + kChecksumBytes) {
    throw TruncatedError("checkpoint is only " + std::to_string(bytes.size()) + " bytes");
  }
  const auto body = bytes.first(bytes.size() - kChecksumBytes);
  std::uint64_t stored = 0;
  for (std::size_t i = 0; i < kChecksumBytes; ++i) stored |= static_cast<std::uint64_t>(bytes[body.size() + i]) << (8 * i);

  char magic[4];
  if (fnv1a64(body) != stored) {
    // Tell a cut-off file from one whose bytes were altered.
    try {
      parse_body(body, magic);
    } catch (const OutOfBytes&) {
      throw TruncatedError("checkpoint ends before its declared contents");
    } catch (const Error&) {
    }
    throw ChecksumError("checkpoint checksum mismatch");
  }
  Checkpoint ckpt;
  try {
    ckpt = parse_body(body, magic);
  } catch (const OutOfBytes&) {
    throw CheckpointFormatError("checkpoint tables overrun the file");
  }
  if (std::memcmp(magic, kMagic, 4) != 0) throw CheckpointFormatError("not a checkpoint (bad magic)");
  if (ckpt.version != Checkpoint::kVersion) {
    throw CheckpointVersionError("checkpoint version " + std::to_string(ckpt.version) + " is not supported (expected " +
                                 std::to_string(Checkpoint::kVersion) + ")");
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const DataError& e) {
    throw CheckpointError(e.what());
  }
  return deserialize_checkpoint(bytes);
}

CFDEPTH_END_NAMESPACE
