#pragma once

#include <string>
#include <string_view>

namespace ips {

/// Weight family of the integrated balancing conditions.
enum class KernelFamily { indicator, projection, exponential };

/// Accepts the short CLI spellings (ind, proj, exp) and the full names.
KernelFamily parse_family(std::string_view name);
std::string to_string(KernelFamily family);

/// Design being balanced: treatment propensity under unconfoundedness, or the
/// instrument propensity for the complier population.
enum class Mode { exogenous, lte };

Mode parse_mode(std::string_view name);
std::string to_string(Mode mode);

}  // namespace ips
