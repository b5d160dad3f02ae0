#include "gazesteer/rng.hpp"

#include <stdexcept>

#include "gazesteer/types.hpp"

namespace gazesteer {

static std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(base ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

std::uint64_t derive_seed(std::uint64_t base, const std::string& tag) {
  // FNV-1a over the tag, then mix with the base.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return derive_seed(base, h);
}

int TensorStore::add(std::string name, Mat value, bool trainable, bool decay) {
  tensors_.push_back({std::move(name), std::move(value), trainable, decay});
  return static_cast<int>(tensors_.size()) - 1;
}

int TensorStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].name == name) return static_cast<int>(i);
  return -1;
}

Tensor& TensorStore::by_name(const std::string& name) {
  int i = find(name);
  if (i < 0) throw std::runtime_error("no such tensor: " + name);
  return tensors_[static_cast<std::size_t>(i)];
}

const Tensor& TensorStore::by_name(const std::string& name) const {
  int i = find(name);
  if (i < 0) throw std::runtime_error("no such tensor: " + name);
  return tensors_[static_cast<std::size_t>(i)];
}

}  // namespace gazesteer
