#include "refsketch/archive.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "refsketch/errors.hpp"

namespace refsketch {

namespace {

constexpr std::array<char, 8> kMagic{'R', 'S', 'K', 'A', 'R', 'C', 'H', '\0'};
constexpr uint32_t kLayoutVersion = 1;

std::string dtype_name(torch::ScalarType type) {
  switch (type) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    case torch::kUInt8: return "u8";
    default: break;
  }
  throw Error(ErrorKind::IOError, std::string("unsupported tensor dtype ") +
                                      std::string(c10::toString(type)));
}

torch::ScalarType dtype_from_name(const std::string& name) {
  if (name == "f32") return torch::kFloat32;
  if (name == "f64") return torch::kFloat64;
  if (name == "i64") return torch::kInt64;
  if (name == "u8") return torch::kUInt8;
  throw Error(ErrorKind::IOError, "unknown tensor dtype '" + name + "'");
}

}  // namespace

void TensorArchive::put(const std::string& name, const torch::Tensor& tensor) {
  tensors_[name] = tensor.detach().cpu().contiguous().clone();
}

const torch::Tensor& TensorArchive::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error(ErrorKind::IOError, "archive has no tensor '" + name + "'");
  return it->second;
}

void TensorArchive::put_module(const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& item : module.named_parameters()) put(prefix + item.key(), item.value());
  for (const auto& item : module.named_buffers()) put(prefix + item.key(), item.value());
}

void TensorArchive::get_module(const std::string& prefix, torch::nn::Module& module) const {
  torch::NoGradGuard guard;
  auto restore = [&](const std::string& key, torch::Tensor& target) {
    const auto& source = get(prefix + key);
    if (source.sizes() != target.sizes()) {
      throw Error(ErrorKind::ShapeMismatch, "archived tensor '" + prefix + key + "' has shape " +
                                                c10::str(source.sizes()) + ", expected " +
                                                c10::str(target.sizes()));
    }
    target.copy_(source.to(target.scalar_type()));
  };
  for (auto& item : module.named_parameters()) restore(item.key(), item.value());
  for (auto& item : module.named_buffers()) restore(item.key(), item.value());
}

void TensorArchive::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["metadata"] = metadata;
  header["tensors"] = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, tensor] : tensors_) {
    const uint64_t nbytes = tensor.numel() * tensor.element_size();
    header["tensors"].push_back({{"name", name},
                                 {"dtype", dtype_name(tensor.scalar_type())},
                                 {"shape", tensor.sizes().vec()},
                                 {"offset", offset},
                                 {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  // Write to a sibling and rename so a crash never leaves a truncated archive.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IOError, "cannot open " + tmp.string());
    const uint64_t header_len = text.size();
    out.write(kMagic.data(), kMagic.size());
    out.write(reinterpret_cast<const char*>(&kLayoutVersion), sizeof(kLayoutVersion));
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, tensor] : tensors_) {
      out.write(static_cast<const char*>(tensor.data_ptr()),
                static_cast<std::streamsize>(tensor.numel() * tensor.element_size()));
    }
    if (!out) throw Error(ErrorKind::IOError, "failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::IOError, "cannot rename to " + path.string() + ": " + ec.message());
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::MissingFile, path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IOError, "cannot open " + path.string());

  std::array<char, 8> magic{};
  uint32_t version = 0;
  uint64_t header_len = 0;
  in.read(magic.data(), magic.size());
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || magic != kMagic) throw Error(ErrorKind::IOError, path.string() + " is not a tensor archive");
  if (version != kLayoutVersion) {
    throw Error(ErrorKind::CheckpointVersionMismatch,
                path.string() + " has archive layout " + std::to_string(version));
  }
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw Error(ErrorKind::IOError, "truncated header in " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::IOError, "bad archive header in " + path.string() + ": " + e.what());
  }
  const auto payload_start = in.tellg();

  TensorArchive archive;
  archive.metadata = header.value("metadata", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    const auto dtype = dtype_from_name(entry.at("dtype").get<std::string>());
    const auto offset = entry.at("offset").get<uint64_t>();
    const auto nbytes = entry.at("nbytes").get<uint64_t>();
    auto tensor = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    if (static_cast<uint64_t>(tensor.numel() * tensor.element_size()) != nbytes) {
      throw Error(ErrorKind::IOError, "size mismatch for tensor in " + path.string());
    }
    in.seekg(payload_start + static_cast<std::streamoff>(offset));
    in.read(static_cast<char*>(tensor.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!in) throw Error(ErrorKind::IOError, "truncated payload in " + path.string());
    archive.tensors_[entry.at("name").get<std::string>()] = tensor;
  }
  return archive;
}

}  // namespace refsketch
