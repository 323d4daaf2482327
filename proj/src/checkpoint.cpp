#include "qulab/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "qulab/error.hpp"

namespace qulab {

namespace {

constexpr std::array<char, 4> kMagic = {'Q', 'U', 'L', 'B'};

const uint32_t* crc_table() {
  static uint32_t table[256];
  static bool built = false;
  if (!built) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    built = true;
  }
  return table;
}

class Writer {
 public:
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void raw(const void* data, size_t len) {
    const uint8_t* p = static_cast<const uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + len);
  }
  std::vector<uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(const std::vector<uint8_t>& bytes) : bytes_(bytes) {}

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(size_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }
  void f32_block(float* dst, size_t count) {
    need(count * 4);
    std::memcpy(dst, bytes_.data() + pos_, count * 4);
    pos_ += count * 4;
  }
  size_t pos() const { return pos_; }

 private:
  void need(size_t n) const {
    if (pos_ + n > bytes_.size()) throw DataError("checkpoint: truncated file");
  }
  const std::vector<uint8_t>& bytes_;
  size_t pos_ = 0;
};

}  // namespace

uint32_t crc32(const uint8_t* data, size_t len) {
  const uint32_t* table = crc_table();
  uint32_t c = 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

uint32_t crc32_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return crc32(bytes.data(), bytes.size());
}

std::vector<uint8_t> serialize_checkpoint(const LanguageModel& model) {
  Writer w;
  w.raw(kMagic.data(), kMagic.size());
  w.u32(kCheckpointVersion);
  w.u32(static_cast<uint32_t>(model.config.vocab_size));
  w.u32(static_cast<uint32_t>(model.config.d_model));
  w.u32(static_cast<uint32_t>(model.config.n_layers));
  w.u32(static_cast<uint32_t>(model.config.n_heads));
  w.u32(static_cast<uint32_t>(model.config.d_ff));
  w.u32(static_cast<uint32_t>(model.config.max_seq_len));
  w.u64(model.config.init_seed);

  w.u32(static_cast<uint32_t>(model.params.num_leaves()));
  for (int flat = 0; flat < model.params.num_leaves(); ++flat) {
    const std::string name = model.params.qualified_name(flat);
    const Tensor& t = model.params.leaf(flat).tensor;
    w.u32(static_cast<uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.u32(static_cast<uint32_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) w.u64(static_cast<uint64_t>(t.dim(d)));
    for (int64_t i = 0; i < t.size(); ++i) w.f32(t[i]);
  }
  std::vector<uint8_t> bytes = w.take();
  const uint32_t checksum = crc32(bytes.data(), bytes.size());
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<uint8_t>(checksum >> (8 * i)));
  return bytes;
}

LanguageModel deserialize_checkpoint(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < kMagic.size() + 8) throw DataError("checkpoint: file too short");
  uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) {
    stored |= static_cast<uint32_t>(bytes[bytes.size() - 4 + static_cast<size_t>(i)]) << (8 * i);
  }
  if (crc32(bytes.data(), bytes.size() - 4) != stored) {
    throw DataError("checkpoint: checksum mismatch");
  }

  Reader r(bytes);
  if (r.str(4) != std::string(kMagic.data(), kMagic.size())) {
    throw DataError("checkpoint: bad magic");
  }
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported format version " + std::to_string(version));
  }
  ModelConfig config;
  config.vocab_size = static_cast<int>(r.u32());
  config.d_model = static_cast<int>(r.u32());
  config.n_layers = static_cast<int>(r.u32());
  config.n_heads = static_cast<int>(r.u32());
  config.d_ff = static_cast<int>(r.u32());
  config.max_seq_len = static_cast<int>(r.u32());
  config.init_seed = r.u64();
  config.validate();

  LanguageModel model = init_model(config);
  const uint32_t tensor_count = r.u32();
  if (tensor_count != static_cast<uint32_t>(model.params.num_leaves())) {
    throw DataError("checkpoint: tensor count does not match the model config");
  }
  for (int flat = 0; flat < model.params.num_leaves(); ++flat) {
    const uint32_t name_len = r.u32();
    const std::string name = r.str(name_len);
    if (name != model.params.qualified_name(flat)) {
      throw DataError("checkpoint: tensor order mismatch at '" + name + "'");
    }
    Tensor& t = model.params.leaf(flat).tensor;
    const uint32_t rank = r.u32();
    if (rank != static_cast<uint32_t>(t.rank())) {
      throw DataError("checkpoint: rank mismatch for '" + name + "'");
    }
    for (int d = 0; d < t.rank(); ++d) {
      if (r.u64() != static_cast<uint64_t>(t.dim(d))) {
        throw DataError("checkpoint: shape mismatch for '" + name + "'");
      }
    }
    r.f32_block(t.data(), static_cast<size_t>(t.size()));
  }
  if (r.pos() != bytes.size() - 4) throw DataError("checkpoint: trailing bytes");
  return model;
}

void save_checkpoint(const std::string& path, const LanguageModel& model) {
  const std::vector<uint8_t> bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

LanguageModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace qulab
