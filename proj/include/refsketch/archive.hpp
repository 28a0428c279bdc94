#pragma once

// Single-file tensor archive used for checkpoints, style-encoder weights and
// extractor weights.
//
// Layout (little endian):
//   8 bytes   magic "RSKARCH\0"
//   u32       archive layout version (currently 1)
//   u64       header length L
//   L bytes   UTF-8 JSON header:
//               {"metadata": {...},
//                "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
//   ...       raw tensor payload; offsets are relative to the payload start
//
// dtype is one of "f32", "f64", "i64", "u8".

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

namespace refsketch {

class TensorArchive {
 public:
  nlohmann::json metadata = nlohmann::json::object();

  void put(const std::string& name, const torch::Tensor& tensor);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const torch::Tensor& get(const std::string& name) const;
  const std::map<std::string, torch::Tensor>& tensors() const { return tensors_; }

  /// Stores every parameter and buffer of `module` under `prefix + name`.
  void put_module(const std::string& prefix, const torch::nn::Module& module);
  /// Copies archived values into `module`; every parameter and buffer must be
  /// present with a matching shape.
  void get_module(const std::string& prefix, torch::nn::Module& module) const;

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  std::map<std::string, torch::Tensor> tensors_;
};

}  // namespace refsketch
