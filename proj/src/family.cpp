#include "ips/family.hpp"

#include "ips/error.hpp"
#include "ips/fit_result.hpp"

namespace ips {

KernelFamily parse_family(std::string_view name) {
  if (name == "ind" || name == "indicator") return KernelFamily::indicator;
  if (name == "proj" || name == "projection") return KernelFamily::projection;
  if (name == "exp" || name == "exponential") return KernelFamily::exponential;
  throw ValidationError("unknown weight family '" + std::string(name) + "' (expected exp, proj or ind)");
}

std::string to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::indicator:
      return "ind";
    case KernelFamily::projection:
      return "proj";
    case KernelFamily::exponential:
      return "exp";
  }
  return "?";
}

Mode parse_mode(std::string_view name) {
  if (name == "exog" || name == "exogenous") return Mode::exogenous;
  if (name == "lte") return Mode::lte;
  throw ValidationError("unknown mode '" + std::string(name) + "' (expected exog or lte)");
}

std::string to_string(Mode mode) { return mode == Mode::lte ? "lte" : "exog"; }

std::string to_string(Method method) {
  switch (method) {
    case Method::mle:
      return "mle";
    case Method::cbps_just:
      return "cbps_just";
    case Method::ips:
      return "ips";
  }
  return "?";
}

}  // namespace ips
