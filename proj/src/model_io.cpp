// SPDX-License-Identifier: Apache-2.0
#include "bcu/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace bcu {
namespace {

static_assert(std::endian::native == std::endian::little, "model I/O assumes a little-endian host");

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void bytes(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void tensor(const Tensor<float>& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) u32(static_cast<std::uint32_t>(d));
    raw(t.data(), static_cast<std::size_t>(t.size()) * sizeof(float));
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

  void need(std::size_t n, const std::string& what) const {
    if (in_.size() - pos_ < n) {
      throw FormatError("model file truncated while reading " + what + " at byte offset " + std::to_string(pos_) +
                        " (need " + std::to_string(n) + " bytes, " + std::to_string(in_.size() - pos_) +
                        " left)");
    }
  }
  std::uint32_t u32(const std::string& what) {
    std::uint32_t v;
    read(&v, sizeof v, what);
    return v;
  }
  std::uint64_t u64(const std::string& what) {
    std::uint64_t v;
    read(&v, sizeof v, what);
    return v;
  }
  std::string bytes(const std::string& what) {
    const std::uint32_t n = u32(what + " length");
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void read(void* dst, std::size_t n, const std::string& what) {
    need(n, what);
    std::memcpy(dst, in_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

void read_tensor(Reader& r, Tensor<float>& dst, const std::string& name) {
  const std::size_t start = r.offset();
  const std::uint32_t rank = r.u32(name + " rank");
  if (rank != dst.rank()) {
    throw FormatError(name + ": rank " + std::to_string(rank) + " does not match architecture at byte offset " +
                      std::to_string(start));
  }
  for (Index axis = 0; axis < dst.rank(); ++axis) {
    const std::uint32_t d = r.u32(name + " dims");
    if (d != dst.dim(axis)) {
      throw FormatError(name + ": dimension " + std::to_string(d) + " expected " + std::to_string(dst.dim(axis)) +
                        " at byte offset " + std::to_string(r.offset() - 4));
    }
  }
  r.read(dst.data(), static_cast<std::size_t>(dst.size()) * sizeof(float), name + " values");
}

}  // namespace

std::string hex64(std::uint64_t value) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << value;
  return os.str();
}

std::vector<std::uint8_t> serialize_model(const Network<float>& net) {
  Writer w;
  w.raw(kModelMagic, sizeof kModelMagic);
  w.u32(kModelVersion);
  w.bytes(net.architecture().id);
  w.u32(static_cast<std::uint32_t>(net.num_classes()));
  w.u32(static_cast<std::uint32_t>(net.weight_layer_count()));
  for (const auto& p : net.params()) {
    w.tensor(p.weight);
    w.tensor(p.bias);
  }
  const std::string meta = net.metadata().dump();
  w.u64(meta.size());
  w.raw(meta.data(), meta.size());
  return w.take();
}

Network<float> deserialize_model(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[4];
  r.read(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kModelMagic, sizeof magic) != 0) {
    throw FormatError("not a model file: bad magic at byte offset 0");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kModelVersion) {
    throw FormatError("unsupported model format version " + std::to_string(version) + " at byte offset 4");
  }
  const std::string arch_id = r.bytes("architecture id");
  Architecture arch;
  try {
    arch = parse_architecture(arch_id);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("model file architecture is invalid: ") + e.what());
  }
  const std::uint32_t classes = r.u32("class count");
  const std::uint32_t layers = r.u32("layer count");
  if (classes != arch.num_classes || layers != arch.weight_layer_count()) {
    throw FormatError("model header (K=" + std::to_string(classes) + ", L=" + std::to_string(layers) +
                      ") disagrees with architecture " + arch.id);
  }
  Network<float> net(arch);
  for (std::size_t l = 0; l < net.weight_layer_count(); ++l) {
    const std::string name = arch.weight_layer_name(l);
    read_tensor(r, net.params()[l].weight, name + " weight");
    read_tensor(r, net.params()[l].bias, name + " bias");
  }
  const std::uint64_t meta_len = r.u64("metadata length");
  r.need(meta_len, "metadata");
  std::string meta(meta_len, '\0');
  r.read(meta.data(), meta_len, "metadata");
  if (!r.at_end()) throw FormatError("trailing bytes after metadata at byte offset " + std::to_string(r.offset()));
  try {
    net.metadata() = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model metadata is not valid JSON: ") + e.what());
  }
  return net;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

void save_model(const Network<float>& net, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_model(net));
}

Network<float> load_model(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return deserialize_model(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string model_hash(const Network<float>& net) {
  std::uint64_t h = fnv1a64(net.architecture().id);
  for (const auto& p : net.params()) {
    h = fnv1a64(p.weight.data(), static_cast<std::size_t>(p.weight.size()) * sizeof(float), h);
    h = fnv1a64(p.bias.data(), static_cast<std::size_t>(p.bias.size()) * sizeof(float), h);
  }
  return hex64(h);
}

}  // namespace bcu
