#include "tskd/core/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "tskd/core/rng.hpp"
#include "tskd/error.hpp"

namespace fs = std::filesystem;

namespace tskd {

namespace {

constexpr char kMagic[8] = {'T', 'S', 'K', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

enum class DType : std::uint8_t { f32 = 1, f64 = 2, i64 = 3, u8 = 4, i32 = 5, boolean = 6 };

DType encode_dtype(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat: return DType::f32;
    case torch::kDouble: return DType::f64;
    case torch::kLong: return DType::i64;
    case torch::kByte: return DType::u8;
    case torch::kInt: return DType::i32;
    case torch::kBool: return DType::boolean;
    default: throw ValidationError(std::string("unsupported checkpoint dtype ") + c10::toString(t));
  }
}

torch::ScalarType decode_dtype(std::uint8_t code) {
  switch (static_cast<DType>(code)) {
    case DType::f32: return torch::kFloat;
    case DType::f64: return torch::kDouble;
    case DType::i64: return torch::kLong;
    case DType::u8: return torch::kByte;
    case DType::i32: return torch::kInt;
    case DType::boolean: return torch::kBool;
  }
  throw IntegrityError("unknown dtype code " + std::to_string(code));
}

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t limit) : bytes_(bytes), limit_(limit) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  const char* raw(std::size_t n) {
    need(n);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > limit_) throw IntegrityError("checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

nlohmann::json metadata_to_json(const CheckpointMetadata& m) {
  return {{"model_kind", m.model_kind}, {"step", m.step}, {"config_hash", m.config_hash}, {"extra", m.extra}};
}

CheckpointMetadata metadata_from_json(const nlohmann::json& j) {
  CheckpointMetadata m;
  m.model_kind = j.at("model_kind").get<std::string>();
  m.step = j.at("step").get<std::int64_t>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.extra = j.at("extra").get<std::map<std::string, std::string>>();
  return m;
}

std::map<std::string, torch::Tensor> module_tensors(const torch::nn::Module& module) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : module.named_parameters(/*recurse=*/true)) out.emplace(p.key(), p.value());
  for (const auto& b : module.named_buffers(/*recurse=*/true)) out.emplace(b.key(), b.value());
  return out;
}

std::string shape_string(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

}  // namespace

std::string serialize_checkpoint(const CheckpointBundle& bundle) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  const std::string meta = metadata_to_json(bundle.metadata).dump();
  put<std::uint64_t>(out, meta.size());
  out += meta;
  put<std::uint64_t>(out, bundle.tensors.size());
  for (const auto& [name, tensor] : bundle.tensors) {
    const auto t = tensor.detach().cpu().contiguous();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(encode_dtype(t.scalar_type())));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (auto d : t.sizes()) put<std::int64_t>(out, d);
    const std::uint64_t nbytes = t.numel() * t.element_size();
    put<std::uint64_t>(out, nbytes);
    out.append(static_cast<const char*>(t.data_ptr()), nbytes);
  }
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(crc));
  return out;
}

CheckpointBundle deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) + 4 + 4) throw IntegrityError("checkpoint truncated");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw IntegrityError("not a checkpoint file");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(body));
  if (static_cast<std::uint32_t>(crc) != stored) throw IntegrityError("checkpoint checksum mismatch");

  Reader r(bytes, body);
  r.take(sizeof(kMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw IntegrityError("unsupported checkpoint version " + std::to_string(version));
  CheckpointBundle bundle;
  const auto meta_len = r.get<std::uint64_t>();
  try {
    bundle.metadata = metadata_from_json(nlohmann::json::parse(r.take(meta_len)));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint metadata unreadable: ") + e.what());
  }
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name = r.take(r.get<std::uint32_t>());
    const auto dtype = decode_dtype(r.get<std::uint8_t>());
    const auto ndim = r.get<std::uint32_t>();
    std::vector<std::int64_t> dims(ndim);
    for (auto& d : dims) d = r.get<std::int64_t>();
    const auto nbytes = r.get<std::uint64_t>();
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    if (static_cast<std::uint64_t>(t.numel() * t.element_size()) != nbytes) {
      throw IntegrityError("record '" + name + "' size disagrees with its shape");
    }
    std::memcpy(t.data_ptr(), r.raw(nbytes), nbytes);
    if (!bundle.tensors.emplace(name, std::move(t)).second) {
      throw IntegrityError("duplicate record '" + name + "'");
    }
  }
  if (r.position() != body) throw IntegrityError("trailing bytes in checkpoint");
  return bundle;
}

void save_checkpoint(const CheckpointBundle& bundle, const fs::path& path) {
  const auto bytes = serialize_checkpoint(bundle);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open '" + tmp.string() + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

CheckpointBundle load_checkpoint(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DependencyError("checkpoint '" + path.string() + "' not found");
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str());
}

CheckpointBundle bundle_from_module(const torch::nn::Module& module, CheckpointMetadata metadata) {
  CheckpointBundle bundle;
  for (const auto& [name, t] : module_tensors(module)) bundle.tensors.emplace(name, t.detach().clone());
  bundle.metadata = std::move(metadata);
  return bundle;
}

void load_module_strict(torch::nn::Module& module, const CheckpointBundle& bundle) {
  torch::NoGradGuard no_grad;
  auto targets = module_tensors(module);
  for (auto& [name, target] : targets) {
    auto it = bundle.tensors.find(name);
    if (it == bundle.tensors.end()) throw IntegrityError("checkpoint lacks tensor '" + name + "'");
    if (it->second.sizes() != target.sizes()) {
      throw IntegrityError("shape mismatch for '" + name + "': checkpoint " + shape_string(it->second) +
                           " vs model " + shape_string(target));
    }
    target.copy_(it->second);
  }
  for (const auto& [name, _] : bundle.tensors) {
    if (!targets.count(name)) throw IntegrityError("checkpoint has unexpected tensor '" + name + "'");
  }
}

PartialLoadReport load_pretrained_partial(torch::nn::Module& module, const CheckpointBundle& bundle) {
  torch::NoGradGuard no_grad;
  PartialLoadReport report;
  auto targets = module_tensors(module);
  for (auto& [name, target] : targets) {
    auto it = bundle.tensors.find(name);
    if (it == bundle.tensors.end()) {
      report.missing.push_back(name);
    } else if (it->second.sizes() != target.sizes()) {
      report.skipped.push_back(name);
    } else {
      target.copy_(it->second);
      report.loaded.push_back(name);
    }
  }
  for (const auto& [name, _] : bundle.tensors) {
    if (!targets.count(name)) report.unknown.push_back(name);
  }
  return report;
}

std::string checkpoint_digest(const CheckpointBundle& bundle) {
  const auto bytes = serialize_checkpoint(bundle);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
  return buf;
}

}  // namespace tskd
