#include "hact/checkpoint.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "binary.hpp"
#include "hact/error.hpp"
#include "hact/io.hpp"

namespace hact {

std::string encode_checkpoint(Model& model, const ExperimentConfig& config, const Hierarchy* hierarchy,
                              const std::string& rng_state) {
  detail::ByteWriter w;
  w.bytes("HACT");
  w.u8(kCheckpointVersion);
  w.str(config_to_text(config));
  std::string htext;
  if (hierarchy != nullptr) {
    std::ostringstream os;
    write_hierarchy(os, *hierarchy);
    htext = os.str();
  }
  w.str(htext);
  w.str(rng_state);
  w.u64(model.trained_epochs);
  const auto arrays = model.arrays();
  w.u32(static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    w.str(a.name);
    w.u32(static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) w.u64(d);
    for (double v : a.values) w.f64(v);
  }
  const auto layers = model.prunable_layers();
  w.u32(static_cast<std::uint32_t>(layers.size()));
  for (const ConvBn* l : layers) {
    w.str(l->name);
    w.u32(static_cast<std::uint32_t>(l->pruned.size()));
    for (bool p : l->pruned) w.u8(p ? 1 : 0);
  }
  w.u64(detail::fnv1a(w.data().data(), w.data().size()));
  return w.data();
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source) {
  if (bytes.size() < 13) {
    throw LoadError(source + ": truncated file (" + std::to_string(bytes.size()) + " bytes) at offset " +
                    std::to_string(bytes.size()));
  }
  detail::ByteReader r(bytes, source, bytes.size() - 8);
  if (r.bytes(4, "magic") != "HACT") r.fail("bad magic (expected HACT)");
  const std::uint8_t version = r.u8("version");
  if (version != kCheckpointVersion) {
    r.fail("version " + std::to_string(version) + " does not match supported version " +
           std::to_string(kCheckpointVersion));
  }
  {
    detail::ByteReader tail(bytes, source);
    const std::uint64_t expected = detail::fnv1a(bytes.data(), bytes.size() - 8);
    tail.bytes(bytes.size() - 8);
    if (tail.u64() != expected) {
      throw LoadError(source + ": checksum mismatch at offset " + std::to_string(bytes.size() - 8) +
                      " (file truncated or corrupted)");
    }
  }
  const std::size_t config_at = r.offset();
  const std::string config_text = r.str("config text");
  ExperimentConfig config;
  try {
    config = parse_config(config_text, source + " config");
  } catch (const ConfigError& e) {
    throw LoadError(std::string(e.what()) + " (config block at offset " + std::to_string(config_at) + ")");
  }
  const std::size_t hierarchy_at = r.offset();
  const std::string htext = r.str("hierarchy text");
  std::optional<Hierarchy> hierarchy;
  if (!htext.empty()) {
    std::istringstream is(htext);
    try {
      hierarchy = read_hierarchy(is);
    } catch (const Error& e) {
      throw LoadError(source + ": bad hierarchy block at offset " + std::to_string(hierarchy_at) + ": " + e.what());
    }
  }
  std::string rng_state = r.str("rng state");
  const std::uint64_t epochs = r.u64("trained_epochs");

  Model model = Model::build(config.model, config.model_seed());
  model.trained_epochs = epochs;
  auto arrays = model.arrays();
  std::map<std::string, ArrayRef*> by_name;
  for (auto& a : arrays) by_name[a.name] = &a;
  const std::uint32_t count = r.u32("array count");
  if (count != arrays.size()) {
    r.fail("array count " + std::to_string(count) + " does not match the model's " + std::to_string(arrays.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    const std::string name = r.str("array name");
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw LoadError(source + ": unknown array '" + name + "' at offset " + std::to_string(at));
    ArrayRef& a = *it->second;
    const std::uint32_t rank = r.u32("array rank");
    Shape shape;
    for (std::uint32_t k = 0; k < rank && k < 8; ++k) shape.push_back(r.u64("array extent"));
    if (shape != a.shape) r.fail("array '" + name + "' has a different shape than the model");
    r.need(a.values.size() * 8, "array values");
    for (double& v : a.values) v = r.f64();
    by_name.erase(it);
  }
  const auto layers = model.prunable_layers();
  const std::uint32_t masks = r.u32("mask count");
  if (masks != layers.size()) r.fail("mask count does not match the model's prunable layers");
  for (ConvBn* l : layers) {
    const std::string name = r.str("mask name");
    if (name != l->name) r.fail("mask for '" + name + "' where '" + l->name + "' was expected");
    const std::uint32_t n = r.u32("mask length");
    if (n != l->pruned.size()) r.fail("mask length of '" + name + "' does not match the layer");
    for (std::uint32_t c = 0; c < n; ++c) {
      const std::uint8_t b = r.u8("mask entry");
      if (b > 1) r.fail("mask entry must be 0 or 1");
      l->pruned[c] = b == 1;
    }
  }
  if (!r.done()) r.fail("unexpected bytes before the checksum");
  model.enforce_pruning();
  return Checkpoint{std::move(config), std::move(model), std::move(hierarchy), std::move(rng_state)};
}

void save_checkpoint(const std::string& path, Model& model, const ExperimentConfig& config, const Hierarchy* hierarchy,
                     const std::string& rng_state) {
  write_text_file(path, encode_checkpoint(model, config, hierarchy, rng_state));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str(), path);
}

}  // namespace hact
