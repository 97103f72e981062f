#include "cdm/moldata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "cdm/com.hpp"
#include "json.hpp"

namespace cdm {

namespace {

constexpr std::array<std::string_view, kElementCount> kSymbols{"H", "C", "N", "O", "F"};

// Mirrors data/valency.json.
constexpr const char* kDefaultTable = R"json({
  "valences": {"H": [1], "C": [4], "N": [3], "O": [2], "F": [1]},
  "margins_pm": {"single": 10, "double": 5, "triple": 3},
  "bond_lengths_pm": {
    "single": {
      "H-H": 74, "H-C": 109, "H-N": 101, "H-O": 96, "H-F": 92,
      "C-C": 154, "C-N": 147, "C-O": 143, "C-F": 135,
      "N-N": 145, "N-O": 140, "N-F": 136,
      "O-O": 148, "O-F": 142,
      "F-F": 142
    },
    "double": {"C-C": 134, "C-N": 129, "C-O": 120, "N-N": 125, "N-O": 121, "O-O": 121},
    "triple": {"C-C": 120, "C-N": 116, "C-O": 113, "N-N": 110}
  }
})json";

constexpr std::array<const char*, 3> kOrderKeys{"single", "double", "triple"};

std::size_t idx(Element e) { return static_cast<std::size_t>(e); }

double distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

[[noreturn]] void parse_fail(std::size_t line, const std::string& msg) {
  throw std::runtime_error("xyz line " + std::to_string(line) + ": " + msg);
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  return splitmix64(h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

}  // namespace

std::string_view element_symbol(Element e) { return kSymbols.at(idx(e)); }

std::optional<Element> parse_element(std::string_view symbol) {
  for (std::size_t i = 0; i < kElementCount; ++i) {
    if (kSymbols[i] == symbol) return static_cast<Element>(i);
  }
  return std::nullopt;
}

void MolecularGraph::validate() const {
  if (positions.empty()) throw std::invalid_argument("molecule: no atoms");
  if (atom_types.size() != positions.size() || charges.size() != positions.size()) {
    throw std::invalid_argument("molecule: positions, atom types and charges differ in length");
  }
  for (const Vec3& p : positions)
    for (double v : p)
      if (!std::isfinite(v)) throw std::invalid_argument("molecule: non-finite coordinate");
  for (Element e : atom_types)
    if (idx(e) >= kElementCount) throw std::invalid_argument("molecule: atom type outside vocabulary");
}

// ---- valency table ------------------------------------------------------------

const ValencyTable& ValencyTable::defaults() {
  static const ValencyTable table = from_json_text(kDefaultTable);
  return table;
}

// Syntax errors, missing keys and wrong value types all surface as
// invalid_argument.
ValencyTable ValencyTable::from_json_text(const std::string& text) try {
  const nlohmann::json doc = nlohmann::json::parse(text);
  ValencyTable t;
  for (auto& plane : t.reference_pm_)
    for (auto& row : plane) row.fill(-1.0);

  for (const auto& [sym, list] : doc.at("valences").items()) {
    auto e = parse_element(sym);
    if (!e) throw std::invalid_argument("valency table: unknown element '" + sym + "'");
    t.valences_[idx(*e)] = list.get<std::vector<int>>();
  }
  for (std::size_t e = 0; e < kElementCount; ++e) {
    if (t.valences_[e].empty()) {
      throw std::invalid_argument("valency table: no valence for " + std::string(kSymbols[e]));
    }
  }
  const auto& margins = doc.at("margins_pm");
  const auto& lengths = doc.at("bond_lengths_pm");
  for (std::size_t k = 0; k < 3; ++k) {
    t.margin_pm_[k] = margins.at(kOrderKeys[k]).get<double>();
    if (!lengths.contains(kOrderKeys[k])) continue;
    for (const auto& [pair, value] : lengths.at(kOrderKeys[k]).items()) {
      const auto dash = pair.find('-');
      auto a = parse_element(pair.substr(0, dash));
      auto b = dash == std::string::npos ? std::nullopt : parse_element(pair.substr(dash + 1));
      if (!a || !b) throw std::invalid_argument("valency table: bad element pair '" + pair + "'");
      const double pm = value.get<double>();
      if (!(pm > 0.0)) throw std::invalid_argument("valency table: non-positive length for " + pair);
      t.reference_pm_[k][idx(*a)][idx(*b)] = pm;
      t.reference_pm_[k][idx(*b)][idx(*a)] = pm;
    }
  }
  // Higher orders must sit strictly inside the lower-order cutoff.
  for (std::size_t a = 0; a < kElementCount; ++a) {
    for (std::size_t b = 0; b < kElementCount; ++b) {
      if (t.reference_pm_[0][a][b] < 0.0) {
        throw std::invalid_argument("valency table: missing single-bond length for " +
                                    std::string(kSymbols[a]) + "-" + std::string(kSymbols[b]));
      }
      for (std::size_t k = 1; k < 3; ++k) {
        const double hi = t.reference_pm_[k][a][b];
        if (hi < 0.0) continue;
        const double lo = t.reference_pm_[k - 1][a][b];
        if (lo < 0.0 || hi + t.margin_pm_[k] >= lo + t.margin_pm_[k - 1]) {
          throw std::invalid_argument("valency table: cutoffs for " + std::string(kSymbols[a]) +
                                      "-" + std::string(kSymbols[b]) + " are not ordered");
        }
      }
    }
  }
  return t;
} catch (const nlohmann::json::exception& e) {
  throw std::invalid_argument(std::string("valency table: ") + e.what());
}

ValencyTable ValencyTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open valency table " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

const std::vector<int>& ValencyTable::allowed_valences(Element e) const {
  return valences_.at(idx(e));
}

bool ValencyTable::valence_allowed(Element e, int valence) const {
  const auto& v = allowed_valences(e);
  return std::find(v.begin(), v.end(), valence) != v.end();
}

std::optional<double> ValencyTable::cutoff(Element a, Element b, int order) const {
  if (order < 1 || order > 3) throw std::out_of_range("bond order must be 1..3");
  const double ref = reference_pm_[order - 1][idx(a)][idx(b)];
  if (ref < 0.0) return std::nullopt;
  return (ref + margin_pm_[order - 1]) / 100.0;
}

int ValencyTable::bond_order(Element a, Element b, double dist) const {
  int order = 0;
  for (int k = 1; k <= 3; ++k) {
    auto c = cutoff(a, b, k);
    if (!c || !(dist < *c)) break;
    order = k;
  }
  return order;
}

// ---- bonds and metrics --------------------------------------------------------

std::vector<Bond> infer_bonds(const MolecularGraph& mol, const ValencyTable& table) {
  mol.validate();
  std::vector<Bond> bonds;
  for (std::size_t i = 0; i < mol.size(); ++i) {
    for (std::size_t j = i + 1; j < mol.size(); ++j) {
      const int order = table.bond_order(mol.atom_types[i], mol.atom_types[j],
                                         distance(mol.positions[i], mol.positions[j]));
      if (order > 0) bonds.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), order});
    }
  }
  return bonds;
}

std::vector<int> bond_order_sums(std::size_t n_atoms, std::span<const Bond> bonds) {
  std::vector<int> sums(n_atoms, 0);
  for (const Bond& b : bonds) {
    sums.at(b.i) += b.order;
    sums.at(b.j) += b.order;
  }
  return sums;
}

std::vector<bool> stable_atoms(const MolecularGraph& mol, const ValencyTable& table) {
  const auto bonds = infer_bonds(mol, table);
  const auto sums = bond_order_sums(mol.size(), bonds);
  std::vector<bool> out(mol.size());
  for (std::size_t i = 0; i < mol.size(); ++i) out[i] = table.valence_allowed(mol.atom_types[i], sums[i]);
  return out;
}

double atom_stability(std::span<const MolecularGraph> samples, const ValencyTable& table) {
  std::size_t stable = 0, total = 0;
  for (const MolecularGraph& m : samples) {
    const auto flags = stable_atoms(m, table);
    stable += static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
    total += flags.size();
  }
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(stable) / static_cast<double>(total);
}

double molecule_stability(std::span<const MolecularGraph> samples, const ValencyTable& table) {
  if (samples.empty()) return 0.0;
  std::size_t stable = 0;
  for (const MolecularGraph& m : samples) {
    const auto flags = stable_atoms(m, table);
    if (std::all_of(flags.begin(), flags.end(), [](bool f) { return f; })) ++stable;
  }
  return 100.0 * static_cast<double>(stable) / static_cast<double>(samples.size());
}

bool is_connected(std::size_t n_atoms, std::span<const Bond> bonds) {
  if (n_atoms == 0) return false;
  std::vector<std::size_t> parent(n_atoms);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::size_t components = n_atoms;
  for (const Bond& b : bonds) {
    const std::size_t ra = find(b.i), rb = find(b.j);
    if (ra != rb) {
      parent[ra] = rb;
      --components;
    }
  }
  return components == 1;
}

std::uint64_t canonical_hash(std::span<const Element> elements, std::span<const Bond> bonds) {
  const std::size_t n = elements.size();
  std::vector<std::vector<std::pair<int, std::uint32_t>>> adj(n);
  for (const Bond& b : bonds) {
    adj.at(b.i).emplace_back(b.order, b.j);
    adj.at(b.j).emplace_back(b.order, b.i);
  }
  std::vector<std::uint64_t> label(n), next(n);
  for (std::size_t i = 0; i < n; ++i) label[i] = mix(0x1234, static_cast<std::uint64_t>(elements[i]) + 1);
  std::vector<std::uint64_t> neigh;
  // n rounds reach every node's full component.
  for (std::size_t round = 0; round < n; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      neigh.clear();
      for (const auto& [order, j] : adj[i]) neigh.push_back(mix(label[j], static_cast<std::uint64_t>(order)));
      std::sort(neigh.begin(), neigh.end());
      std::uint64_t h = mix(label[i], neigh.size());
      for (std::uint64_t v : neigh) h = mix(h, v);
      next[i] = h;
    }
    label.swap(next);
  }
  std::sort(label.begin(), label.end());
  std::uint64_t h = mix(0xabcdef, n);
  for (std::uint64_t v : label) h = mix(h, v);
  return h;
}

ValidityReport validity_and_uniqueness(std::span<const MolecularGraph> samples,
                                       const ValencyTable& table) {
  ValidityReport report;
  if (samples.empty()) return report;
  std::size_t valid = 0;
  std::vector<std::uint64_t> seen;
  for (const MolecularGraph& m : samples) {
    const auto bonds = infer_bonds(m, table);
    const auto sums = bond_order_sums(m.size(), bonds);
    bool ok = is_connected(m.size(), bonds);
    for (std::size_t i = 0; ok && i < m.size(); ++i) ok = table.valence_allowed(m.atom_types[i], sums[i]);
    if (!ok) continue;
    ++valid;
    seen.push_back(canonical_hash(m.atom_types, bonds));
  }
  std::sort(seen.begin(), seen.end());
  const auto unique = static_cast<std::size_t>(std::unique(seen.begin(), seen.end()) - seen.begin());
  const double total = static_cast<double>(samples.size());
  report.valid = 100.0 * static_cast<double>(valid) / total;
  report.valid_unique = 100.0 * static_cast<double>(unique) / total;
  return report;
}

// ---- XYZ ------------------------------------------------------------------------

std::vector<MolecularGraph> parse_xyz(std::string_view text) {
  std::vector<std::string> lines;
  {
    std::size_t start = 0;
    while (start <= text.size()) {
      std::size_t end = text.find('\n', start);
      if (end == std::string_view::npos) end = text.size();
      std::string line(text.substr(start, end - start));
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(std::move(line));
      if (end == text.size()) break;
      start = end + 1;
    }
  }
  auto blank = [](const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
  };

  std::vector<MolecularGraph> out;
  std::size_t i = 0;
  while (i < lines.size()) {
    if (blank(lines[i])) {
      ++i;
      continue;
    }
    const std::size_t count_line = i + 1;
    std::istringstream cs(lines[i]);
    long long count = -1;
    std::string extra;
    if (!(cs >> count) || (cs >> extra) || count <= 0) {
      parse_fail(count_line, "expected a positive atom count, got '" + lines[i] + "'");
    }
    if (i + 1 >= lines.size()) parse_fail(count_line + 1, "missing comment line");
    i += 2;
    MolecularGraph mol;
    for (long long a = 0; a < count; ++a, ++i) {
      if (i >= lines.size()) parse_fail(i + 1, "file ends before all " + std::to_string(count) + " atoms");
      std::istringstream ls(lines[i]);
      std::string sym;
      Vec3 p{};
      if (!(ls >> sym >> p[0] >> p[1] >> p[2])) {
        parse_fail(i + 1, "expected 'Element x y z [charge]', got '" + lines[i] + "'");
      }
      auto e = parse_element(sym);
      if (!e) parse_fail(i + 1, "unknown element symbol '" + sym + "'");
      int charge = 0;
      if (!(ls >> charge)) {
        if (!ls.eof()) parse_fail(i + 1, "malformed charge column in '" + lines[i] + "'");
        charge = 0;
      } else if (ls >> extra) {
        parse_fail(i + 1, "unexpected trailing field '" + extra + "'");
      }
      for (double v : p)
        if (!std::isfinite(v)) parse_fail(i + 1, "non-finite coordinate");
      mol.positions.push_back(p);
      mol.atom_types.push_back(*e);
      mol.charges.push_back(charge);
    }
    out.push_back(std::move(mol));
  }
  return out;
}

std::vector<MolecularGraph> load_xyz(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_xyz(ss.str());
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::vector<MolecularGraph> load_xyz_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".xyz") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<MolecularGraph> out;
  for (const auto& f : files) {
    auto mols = load_xyz(f);
    out.insert(out.end(), std::make_move_iterator(mols.begin()), std::make_move_iterator(mols.end()));
  }
  return out;
}

std::string format_xyz(std::span<const MolecularGraph> molecules, std::span<const std::string> comments) {
  std::string out;
  char buf[160];
  for (std::size_t m = 0; m < molecules.size(); ++m) {
    const MolecularGraph& mol = molecules[m];
    mol.validate();
    out += std::to_string(mol.size()) + "\n";
    std::string comment = m < comments.size() ? comments[m] : std::string();
    std::replace(comment.begin(), comment.end(), '\n', ' ');
    out += comment + "\n";
    for (std::size_t a = 0; a < mol.size(); ++a) {
      std::snprintf(buf, sizeof(buf), "%s %.6f %.6f %.6f %d\n",
                    std::string(element_symbol(mol.atom_types[a])).c_str(), mol.positions[a][0],
                    mol.positions[a][1], mol.positions[a][2], mol.charges[a]);
      out += buf;
    }
  }
  return out;
}

void write_xyz(const std::filesystem::path& path, std::span<const MolecularGraph> molecules,
               std::span<const std::string> comments) {
  const std::string text = format_xyz(molecules, comments);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// ---- synthetic data ---------------------------------------------------------------

std::string_view to_string(SynthKind kind) {
  return kind == SynthKind::RigidShape ? "rigid_shape" : "two_body";
}

std::optional<SynthKind> parse_synth_kind(std::string_view text) {
  if (text == "rigid_shape") return SynthKind::RigidShape;
  if (text == "two_body") return SynthKind::TwoBody;
  return std::nullopt;
}

MolecularGraph rigid_template() {
  constexpr double kCH = 1.09;
  const double s = kCH / std::numbers::sqrt3;
  MolecularGraph mol;
  mol.positions = {{0, 0, 0}, {s, s, s}, {s, -s, -s}, {-s, s, -s}, {-s, -s, s}};
  mol.atom_types = {Element::C, Element::H, Element::H, Element::H, Element::H};
  mol.charges = {0, 0, 0, 0, 0};
  return mol;
}

std::vector<MolecularGraph> synth_dataset(SynthKind kind, std::size_t n_samples, Rng& rng) {
  if (n_samples == 0) throw std::invalid_argument("synth_dataset: n_samples must be positive");
  struct Pair {
    Element a, b;
    double length;
    double weight;
  };
  // Lengths equal the single-bond reference of the default table.
  static const std::array<Pair, 3> kPairs{{{Element::H, Element::H, 0.74, 0.5},
                                           {Element::H, Element::F, 0.92, 0.3},
                                           {Element::F, Element::F, 1.42, 0.2}}};
  const MolecularGraph tmpl = rigid_template();
  std::vector<MolecularGraph> out;
  out.reserve(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const OrthogonalAction rot = random_orthogonal(rng, +1);
    MolecularGraph mol;
    if (kind == SynthKind::RigidShape) {
      mol = tmpl;
      for (Vec3& p : mol.positions) p = rot.apply(p);
    } else {
      const double u = rng.uniform();
      double acc = 0.0;
      const Pair* pick = &kPairs.back();
      for (const Pair& p : kPairs) {
        acc += p.weight;
        if (u < acc) {
          pick = &p;
          break;
        }
      }
      const Vec3 axis = rot.apply(Vec3{pick->length / 2.0, 0.0, 0.0});
      mol.positions = {axis, {-axis[0], -axis[1], -axis[2]}};
      mol.atom_types = {pick->a, pick->b};
      mol.charges = {0, 0};
    }
    mol.positions = com_project(mol.positions);
    out.push_back(std::move(mol));
  }
  return out;
}

std::vector<double> distance_matrix(const MolecularGraph& mol) {
  const std::size_t n = mol.size();
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d[i * n + j] = distance(mol.positions[i], mol.positions[j]);
  return d;
}

double matched_distance_error(const MolecularGraph& a, const MolecularGraph& b) {
  const std::size_t n = a.size();
  if (b.size() != n) throw std::invalid_argument("matched_distance_error: atom counts differ");
  if (n > 8) throw std::invalid_argument("matched_distance_error: more than 8 atoms");
  const auto da = distance_matrix(a);
  const auto db = distance_matrix(b);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = INFINITY;
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double diff = da[i * n + j] - db[perm[i] * n + perm[j]];
        s += diff * diff;
      }
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best);
}

// ---- centre of mass -----------------------------------------------------------------

Vec3 centroid(std::span<const Vec3> positions) {
  if (positions.empty()) throw std::invalid_argument("com_project: no positions");
  Vec3 c{0, 0, 0};
  for (const Vec3& p : positions)
    for (int k = 0; k < 3; ++k) c[k] += p[k];
  for (double& v : c) v /= static_cast<double>(positions.size());
  return c;
}

std::vector<Vec3> com_project(std::span<const Vec3> positions) {
  const Vec3 c = centroid(positions);
  std::vector<Vec3> out(positions.begin(), positions.end());
  for (Vec3& p : out)
    for (int k = 0; k < 3; ++k) p[k] -= c[k];
  return out;
}

}  // namespace cdm
