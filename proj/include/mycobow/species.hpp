#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "mycobow/error.hpp"

namespace mycobow {

// Closed vocabulary; the order is the class order used by every classifier.
enum class Species : std::size_t { CA = 0, CG, CT, CP, CL, SC, SB, MF, CN };

inline constexpr std::size_t kNumSpecies = 9;

inline constexpr std::array<std::string_view, kNumSpecies> kSpeciesCodes = {
    "CA", "CG", "CT", "CP", "CL", "SC", "SB", "MF", "CN"};

inline constexpr std::array<std::string_view, kNumSpecies> kSpeciesNames = {
    "Candida albicans",      "Candida glabrata",        "Candida tropicalis",
    "Candida parapsilosis",  "Candida lusitaniae",      "Saccharomyces cerevisiae",
    "Saccharomyces boulardii", "Malassezia furfur",    "Cryptococcus neoformans"};

constexpr std::size_t index_of(Species s) { return static_cast<std::size_t>(s); }

constexpr Species species_at(std::size_t i) { return static_cast<Species>(i); }

constexpr std::string_view code_of(Species s) { return kSpeciesCodes[index_of(s)]; }

inline std::optional<Species> try_parse_species(std::string_view code) {
  for (std::size_t i = 0; i < kNumSpecies; ++i) {
    if (kSpeciesCodes[i] == code) return species_at(i);
  }
  return std::nullopt;
}

inline Species parse_species(std::string_view code) {
  if (auto s = try_parse_species(code)) return *s;
  throw data_error("unknown species code '" + std::string(code) + "'");
}

}  // namespace mycobow
