#pragma once

#include <array>
#include <string>
#include <string_view>

namespace hbscreen {

enum class Region { Nailbed = 0, Conjunctiva = 1, Tongue = 2 };
inline constexpr std::array<Region, 3> kRegions = {Region::Nailbed, Region::Conjunctiva, Region::Tongue};

// Ordered from most to least severe; ties in classification resolve toward
// the lower index.
enum class Severity { Severe = 0, Mild = 1, NonAnaemic = 2 };
inline constexpr std::array<Severity, 3> kSeverities = {Severity::Severe, Severity::Mild, Severity::NonAnaemic};

enum class Sex { Female, Male };

struct Demographics {
  double age_years = 30.0;
  Sex sex = Sex::Female;
  bool pregnant = false;
  double altitude_m = 0.0;

  // Throws InvalidArgument: negative age, pregnancy without female sex, non-finite values.
  void validate() const;
};

std::string_view to_string(Region r) noexcept;
std::string_view to_string(Severity s) noexcept;
std::string_view to_string(Sex s) noexcept;

// Throw InvalidArgument on unknown names.
Region region_from_string(std::string_view s);
Severity severity_from_string(std::string_view s);
Sex sex_from_string(std::string_view s);

inline constexpr int index_of(Region r) noexcept { return static_cast<int>(r); }
inline constexpr int index_of(Severity s) noexcept { return static_cast<int>(s); }

}  // namespace hbscreen
