#pragma once

#include <string_view>
#include <vector>

namespace fedcm::experiment {

struct Preset {
  std::string_view name;
  std::string_view json;
};

/// Configs shipped in presets/, compiled into the binary.
const std::vector<Preset>& presets();
const Preset* find_preset(std::string_view name);

}  // namespace fedcm::experiment
