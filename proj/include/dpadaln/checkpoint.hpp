#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "dpadaln/named_tensors.hpp"
#include "dpadaln/run_config.hpp"

namespace dpadaln::ckpt {

/// Run configuration plus raw and EMA parameters. Values are stored as
/// hexadecimal floats, so a save/load round trip is bit-exact.
struct Checkpoint {
  run::RunConfig config;
  std::uint64_t step = 0;
  ParamSet params;
  ParamSet ema;

  std::string serialize() const;
  static Checkpoint parse(std::string_view text);
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace dpadaln::ckpt
