#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grlab/error.hpp"
#include "grlab/policy.hpp"
#include "grlab/trainer.hpp"

namespace grlab {

inline constexpr std::string_view kArtifactName = "grlab";
inline constexpr std::string_view kArtifactVersion = "1.0.0";

// Checkpoint layout, all integers and floats little-endian:
//   magic      8 bytes  "GRLABCK1"
//   u32        vocab_size
//   u32        max_len
//   u32        num_prompts
//   u32        stop_on_eos (0/1)
//   u64        policy version
//   u64        seed
//   u64        next_step
//   u64        number of logits N
//   f64 x N    logits, context-major
// Random state is fully determined by (seed, next_step): every stream is a
// keyed substream of the seed.
inline constexpr std::array<char, 8> kCheckpointMagic{'G', 'R', 'L', 'A', 'B', 'C', 'K', '1'};

struct Checkpoint {
  TabularPolicy policy;
  std::uint64_t seed = 0;
  std::uint64_t next_step = 0;
};

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> b;
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b.data(), 8);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  std::array<char, 4> b;
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b.data(), 4);
}

inline std::uint64_t get_u64(std::istream& is) {
  std::array<unsigned char, 8> b;
  if (!is.read(reinterpret_cast<char*>(b.data()), 8)) throw DataError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b;
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw DataError("truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  const auto& s = ck.policy.shape();
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_u32(os, static_cast<std::uint32_t>(s.vocab_size));
  detail::put_u32(os, static_cast<std::uint32_t>(s.max_len));
  detail::put_u32(os, static_cast<std::uint32_t>(s.num_prompts));
  detail::put_u32(os, s.stop_on_eos ? 1u : 0u);
  detail::put_u64(os, ck.policy.version());
  detail::put_u64(os, ck.seed);
  detail::put_u64(os, ck.next_step);
  const auto logits = ck.policy.logits();
  detail::put_u64(os, logits.size());
  for (double v : logits) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic) throw DataError("not a checkpoint file");
  PolicyShape shape;
  shape.vocab_size = static_cast<int>(detail::get_u32(is));
  shape.max_len = static_cast<int>(detail::get_u32(is));
  shape.num_prompts = static_cast<int>(detail::get_u32(is));
  const std::uint32_t eos = detail::get_u32(is);
  if (eos > 1) throw DataError("corrupt checkpoint header");
  shape.stop_on_eos = eos == 1;
  const std::uint64_t version = detail::get_u64(is);
  const std::uint64_t seed = detail::get_u64(is);
  const std::uint64_t next_step = detail::get_u64(is);
  const std::uint64_t n = detail::get_u64(is);
  shape.validate();
  if (n != shape.num_contexts() * static_cast<std::uint64_t>(shape.vocab_size)) {
    throw DataError("checkpoint logit count does not match its shape");
  }
  std::vector<double> logits(n);
  for (double& v : logits) v = std::bit_cast<double>(detail::get_u64(is));
  return {TabularPolicy(shape, std::move(logits), version), seed, next_step};
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  write_checkpoint(os, ck);
  if (!os) throw Error("failed writing " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  return read_checkpoint(is);
}

inline nlohmann::ordered_json to_json(const MetricsRecord& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["mean_reward"] = m.mean_reward;
  j["kl_to_init"] = m.kl_to_init;
  j["entropy_root"] = m.entropy_root;
  j["clip_fraction"] = m.clip_fraction;
  j["mean_response_length"] = m.mean_response_length;
  j["grad_norm"] = m.grad_norm;
  j["generator_version"] = m.generator_version;
  j["off_policyness"] = m.off_policyness;
  return j;
}

inline MetricsRecord metrics_from_json(const nlohmann::json& j) {
  MetricsRecord m;
  m.step = j.at("step").get<std::uint64_t>();
  m.mean_reward = j.at("mean_reward").get<double>();
  m.kl_to_init = j.at("kl_to_init").get<double>();
  m.entropy_root = j.at("entropy_root").get<double>();
  m.clip_fraction = j.at("clip_fraction").get<double>();
  m.mean_response_length = j.at("mean_response_length").get<double>();
  m.grad_norm = j.at("grad_norm").get<double>();
  m.generator_version = j.at("generator_version").get<std::uint64_t>();
  m.off_policyness = j.at("off_policyness").get<std::int64_t>();
  return m;
}

// One JSON object per line.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path) : os_(path, std::ios::trunc) {
    if (!os_) throw Error("cannot write " + path.string());
  }
  void write(const MetricsRecord& m) { os_ << to_json(m).dump() << '\n'; }
  void flush() { os_.flush(); }

 private:
  std::ofstream os_;
};

inline std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read " + path.string());
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) out.push_back(metrics_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

}  // namespace grlab
