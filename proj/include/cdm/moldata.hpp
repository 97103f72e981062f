#pragma once

// Molecular graphs, bond perception from interatomic distances, the
// stability / validity / uniqueness metrics, extended-XYZ I/O, and
// synthetic toy datasets.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cdm/clifford.hpp"
#include "cdm/rng.hpp"

namespace cdm {

enum class Element : std::uint8_t { H = 0, C = 1, N = 2, O = 3, F = 4 };
inline constexpr std::size_t kElementCount = 5;

std::string_view element_symbol(Element e);
std::optional<Element> parse_element(std::string_view symbol);

struct MolecularGraph {
  std::vector<Vec3> positions;  ///< Angstrom
  std::vector<Element> atom_types;
  std::vector<int> charges;

  std::size_t size() const { return positions.size(); }
  /// Throws std::invalid_argument if empty, ragged, or non-finite.
  void validate() const;
};

struct Bond {
  std::uint32_t i;
  std::uint32_t j;
  int order;
  friend bool operator==(const Bond&, const Bond&) = default;
};

/// Allowed valences per element and distance thresholds per element pair.
/// Bond order k applies when the distance is below reference_k + margin_k;
/// higher orders are tested only inside the lower-order cutoff.
class ValencyTable {
 public:
  /// Built-in table (identical to data/valency.json).
  static const ValencyTable& defaults();
  static ValencyTable from_json_text(const std::string& text);
  static ValencyTable load(const std::filesystem::path& path);

  const std::vector<int>& allowed_valences(Element e) const;
  bool valence_allowed(Element e, int valence) const;
  /// Cutoff (Angstrom) for bond order 1..3 between a and b; nullopt when the
  /// order is not defined for the pair.
  std::optional<double> cutoff(Element a, Element b, int order) const;
  /// 0 (no bond), 1, 2 or 3.
  int bond_order(Element a, Element b, double distance) const;

 private:
  std::array<std::vector<int>, kElementCount> valences_;
  // [order-1][a][b], in picometres; < 0 when undefined.
  std::array<std::array<std::array<double, kElementCount>, kElementCount>, 3> reference_pm_{};
  std::array<double, 3> margin_pm_{};
};

/// Every pair (i < j) with non-zero inferred order, in lexicographic order.
std::vector<Bond> infer_bonds(const MolecularGraph& mol, const ValencyTable& table);

/// Per-atom sum of bond orders.
std::vector<int> bond_order_sums(std::size_t n_atoms, std::span<const Bond> bonds);
/// Per-atom stability flags.
std::vector<bool> stable_atoms(const MolecularGraph& mol, const ValencyTable& table);

/// A generated batch plus the provenance recorded in sample files.
struct SampleSet {
  std::vector<MolecularGraph> molecules;
  std::uint64_t seed = 0;
  std::string checkpoint_id;
};

/// Percentages in [0, 100]. An empty set yields 0.
double atom_stability(std::span<const MolecularGraph> samples,
                      const ValencyTable& table = ValencyTable::defaults());
double molecule_stability(std::span<const MolecularGraph> samples,
                          const ValencyTable& table = ValencyTable::defaults());

struct ValidityReport {
  double valid = 0.0;         ///< % of samples with all atoms stable and a connected bond graph
  double valid_unique = 0.0;  ///< % of samples that are valid and first of their canonical class
};
ValidityReport validity_and_uniqueness(std::span<const MolecularGraph> samples,
                                       const ValencyTable& table = ValencyTable::defaults());

bool is_connected(std::size_t n_atoms, std::span<const Bond> bonds);

/// Relabeling-invariant hash of an element-labelled graph with bond-order
/// edge labels (iterated neighbourhood refinement).
std::uint64_t canonical_hash(std::span<const Element> elements, std::span<const Bond> bonds);

/// Multi-frame extended XYZ. Throws std::runtime_error with the 1-based line
/// number on malformed input or an unknown element symbol.
std::vector<MolecularGraph> parse_xyz(std::string_view text);
std::vector<MolecularGraph> load_xyz(const std::filesystem::path& path);
/// Loads every *.xyz file of a directory in lexicographic path order.
std::vector<MolecularGraph> load_xyz_dir(const std::filesystem::path& dir);
std::string format_xyz(std::span<const MolecularGraph> molecules,
                       std::span<const std::string> comments = {});
void write_xyz(const std::filesystem::path& path, std::span<const MolecularGraph> molecules,
               std::span<const std::string> comments = {});

enum class SynthKind { RigidShape, TwoBody };
std::string_view to_string(SynthKind kind);
std::optional<SynthKind> parse_synth_kind(std::string_view text);

/// Methane-like CH4 template (C-H 1.09 A, tetrahedral), centred.
MolecularGraph rigid_template();
std::vector<MolecularGraph> synth_dataset(SynthKind kind, std::size_t n_samples, Rng& rng);

/// Sorted pairwise-distance matrix helpers for shape comparison.
std::vector<double> distance_matrix(const MolecularGraph& mol);
/// Smallest Frobenius norm of D(a) - P D(b) P^T over all atom permutations P.
/// Throws std::invalid_argument if sizes differ or exceed 8 atoms.
double matched_distance_error(const MolecularGraph& a, const MolecularGraph& b);

}  // namespace cdm
