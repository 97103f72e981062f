#include "cdm/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cdm {

namespace {

constexpr std::string_view kMagic = "CDMC1";

void append_le(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffU));
}

double read_le(const char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  return std::bit_cast<double>(bits);
}

std::string payload_bytes(const ParamStore& tensors) {
  std::string out;
  for (const auto& name : tensors.names())
    for (double v : tensors.get(name).data) append_le(out, v);
  return out;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string tape_name(std::size_t m, std::size_t k, char part) {
  return "m" + std::to_string(m) + ".k" + std::to_string(k) + "." + part;
}

}  // namespace

std::string serialize_container(const Container& c) {
  nlohmann::json header;
  header["meta"] = c.meta;
  header["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& name : c.tensors.names()) {
    const Tensor& t = c.tensors.get(name);
    header["tensors"].push_back({{"name", name}, {"dtype", "float64"}, {"shape", t.shape}, {"offset", offset}});
    offset += t.size() * sizeof(double);
  }
  const std::string text = header.dump();
  std::string out = std::string(kMagic) + " " + std::to_string(text.size()) + "\n" + text;
  out += payload_bytes(c.tensors);
  return out;
}

Container parse_container(std::string_view bytes) {
  const std::size_t nl = bytes.find('\n');
  if (nl == std::string_view::npos || bytes.substr(0, kMagic.size() + 1) != std::string(kMagic) + " ") {
    throw std::runtime_error("container: missing CDMC1 magic line");
  }
  std::size_t header_len = 0;
  try {
    header_len = std::stoull(std::string(bytes.substr(kMagic.size() + 1, nl - kMagic.size() - 1)));
  } catch (const std::exception&) {
    throw std::runtime_error("container: malformed header length");
  }
  if (nl + 1 + header_len > bytes.size()) throw std::runtime_error("container: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(nl + 1, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("container: header is not valid JSON: ") + e.what());
  }
  const std::string_view payload = bytes.substr(nl + 1 + header_len);

  Container c;
  try {
    c.meta = header.at("meta");
    for (const auto& entry : header.at("tensors")) {
      if (entry.at("dtype") != "float64") throw std::runtime_error("container: unsupported dtype");
      Shape shape = entry.at("shape").get<Shape>();
      const std::size_t offset = entry.at("offset").get<std::size_t>();
      const std::size_t n = shape_numel(shape);
      if (offset + n * sizeof(double) > payload.size()) {
        throw std::runtime_error("container: payload truncated in tensor " + entry.at("name").get<std::string>());
      }
      std::vector<double> values(n);
      for (std::size_t k = 0; k < n; ++k) values[k] = read_le(payload.data() + offset + k * sizeof(double));
      c.tensors.add(entry.at("name").get<std::string>(), Tensor(std::move(shape), std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("container: malformed manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("container: ") + e.what());
  }
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  const std::string bytes = serialize_container(c);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_container(ss.str());
}

std::string payload_id(const Container& c) { return fnv1a_hex(payload_bytes(c.tensors)); }

// ---- checkpoints -------------------------------------------------------------------

Container model_to_container(const DiffusionModel& model, const nlohmann::json& extra) {
  Container c;
  const ModelSpec& s = model.spec;
  c.meta = {{"kind", "checkpoint"},
            {"mode", std::string(to_string(s.mode))},
            {"net", {{"layers", s.net.layers}, {"mv_channels", s.net.mv_channels}, {"scalar_hidden", s.net.scalar_hidden}}},
            {"encoder_layers", s.encoder_layers},
            {"timesteps", s.timesteps},
            {"schedule", std::string(to_string(s.schedule))},
            {"size_histogram", model.size_histogram},
            {"run", extra}};
  c.tensors = model.params;
  return c;
}

DiffusionModel model_from_container(const Container& c) {
  DiffusionModel model;
  try {
    if (c.meta.at("kind") != "checkpoint") throw std::runtime_error("container is not a checkpoint");
    ModelSpec& s = model.spec;
    auto mode = parse_mode(c.meta.at("mode").get<std::string>());
    auto kind = parse_schedule_kind(c.meta.at("schedule").get<std::string>());
    if (!mode || !kind) throw std::runtime_error("checkpoint: unknown mode or schedule");
    s.mode = *mode;
    s.schedule = *kind;
    s.net.layers = c.meta.at("net").at("layers").get<std::size_t>();
    s.net.mv_channels = c.meta.at("net").at("mv_channels").get<std::size_t>();
    s.net.scalar_hidden = c.meta.at("net").at("scalar_hidden").get<std::size_t>();
    s.encoder_layers = c.meta.at("encoder_layers").get<std::size_t>();
    s.timesteps = c.meta.at("timesteps").get<int>();
    model.size_histogram = c.meta.at("size_histogram").get<std::vector<std::size_t>>();
    model.schedule = build_schedule(s.schedule, s.timesteps);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: malformed metadata: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("checkpoint: ") + e.what());
  }
  model.params = c.tensors;
  try {
    validate_model(model);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("checkpoint: ") + e.what());
  }
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const DiffusionModel& model, const nlohmann::json& extra) {
  write_container(path, model_to_container(model, extra));
}

DiffusionModel load_checkpoint(const std::filesystem::path& path, std::string* id, nlohmann::json* extra) {
  const Container c = read_container(path);
  DiffusionModel model = model_from_container(c);
  if (id) *id = payload_id(c);
  if (extra) *extra = c.meta.value("run", nlohmann::json::object());
  return model;
}

std::string checkpoint_id(const DiffusionModel& model) { return fnv1a_hex(payload_bytes(model.params)); }

// ---- noise tapes --------------------------------------------------------------------

Container tape_to_container(const NoiseTape& tape) {
  Container c;
  c.meta = {{"kind", "noise_tape"}, {"seed", tape.seed}, {"sizes", tape.sizes}};
  std::vector<std::size_t> steps;
  for (std::size_t m = 0; m < tape.draws.size(); ++m) {
    steps.push_back(tape.draws[m].size());
    for (std::size_t k = 0; k < tape.draws[m].size(); ++k) {
      c.tensors.add(tape_name(m, k, 'x'), tape.draws[m][k].eps_x);
      c.tensors.add(tape_name(m, k, 'h'), tape.draws[m][k].eps_h);
    }
  }
  c.meta["steps"] = steps;
  return c;
}

NoiseTape tape_from_container(const Container& c) {
  NoiseTape tape;
  try {
    if (c.meta.at("kind") != "noise_tape") throw std::runtime_error("container is not a noise tape");
    tape.seed = c.meta.at("seed").get<std::uint64_t>();
    tape.sizes = c.meta.at("sizes").get<std::vector<std::size_t>>();
    const auto steps = c.meta.at("steps").get<std::vector<std::size_t>>();
    tape.draws.resize(steps.size());
    for (std::size_t m = 0; m < steps.size(); ++m)
      for (std::size_t k = 0; k < steps[m]; ++k)
        tape.draws[m].push_back({c.tensors.get(tape_name(m, k, 'x')), c.tensors.get(tape_name(m, k, 'h'))});
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("noise tape: malformed metadata: ") + e.what());
  } catch (const std::out_of_range& e) {
    throw std::runtime_error(std::string("noise tape: ") + e.what());
  }
  return tape;
}

}  // namespace cdm
