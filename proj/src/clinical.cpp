#include "hbscreen/clinical.hpp"

#include <cmath>

#include "hbscreen/error.hpp"

namespace hbscreen {

void Demographics::validate() const {
  if (!std::isfinite(age_years) || age_years < 0.0) throw InvalidArgument("age_years must be >= 0");
  if (!std::isfinite(altitude_m)) throw InvalidArgument("altitude_m must be finite");
  if (pregnant && sex != Sex::Female) throw InvalidArgument("pregnant is only valid for sex = female");
}

std::string_view to_string(Region r) noexcept {
  switch (r) {
    case Region::Nailbed: return "nailbed";
    case Region::Conjunctiva: return "conjunctiva";
    case Region::Tongue: return "tongue";
  }
  return "?";
}

std::string_view to_string(Severity s) noexcept {
  switch (s) {
    case Severity::Severe: return "severe";
    case Severity::Mild: return "mild";
    case Severity::NonAnaemic: return "non_anaemic";
  }
  return "?";
}

std::string_view to_string(Sex s) noexcept { return s == Sex::Female ? "female" : "male"; }

Region region_from_string(std::string_view s) {
  for (Region r : kRegions) {
    if (to_string(r) == s) return r;
  }
  throw InvalidArgument("unknown region '" + std::string(s) + "'");
}

Severity severity_from_string(std::string_view s) {
  for (Severity v : kSeverities) {
    if (to_string(v) == s) return v;
  }
  throw InvalidArgument("unknown severity '" + std::string(s) + "'");
}

Sex sex_from_string(std::string_view s) {
  if (s == "female" || s == "F" || s == "f") return Sex::Female;
  if (s == "male" || s == "M" || s == "m") return Sex::Male;
  throw InvalidArgument("unknown sex '" + std::string(s) + "'");
}

}  // namespace hbscreen
