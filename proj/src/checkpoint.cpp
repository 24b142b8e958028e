#include "dpadaln/checkpoint.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fmt/format.h>
#include <sstream>

#include "dpadaln/atomic_io.hpp"

namespace dpadaln::ckpt {

namespace {

constexpr std::string_view kMagic = "dpadaln-checkpoint v1";

void write_set(std::string& out, const char* tag, const ParamSet& set) {
  char buf[64];
  for (const auto& e : set.entries()) {
    out += fmt::format("{} {} {}", tag, e.id, e.value.rank());
    for (auto d : e.value.shape) out += fmt::format(" {}", d);
    out += "\n";
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%a", e.value[i]);
      out += buf;
      out += (i + 1 == e.value.size() || (i + 1) % 8 == 0) ? '\n' : ' ';
    }
  }
}

double parse_hex(const std::string& tok) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size()) throw Error("checkpoint: bad value '" + tok + "'");
  return v;
}

}  // namespace

std::string Checkpoint::serialize() const {
  std::string out(kMagic);
  out += "\n";
  const std::string ini = config.to_ini();
  std::size_t lines = 0;
  for (char ch : ini) lines += ch == '\n';
  out += fmt::format("config {}\n", lines);
  out += ini;
  out += fmt::format("step {}\n", step);
  out += fmt::format("tensors {} {}\n", params.count(), ema.count());
  write_set(out, "param", params);
  write_set(out, "ema", ema);
  out += "end\n";
  return out;
}

Checkpoint Checkpoint::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw Error("checkpoint: missing or unsupported header");
  Checkpoint c;
  std::string word;
  std::size_t n_lines = 0;
  if (!(in >> word >> n_lines) || word != "config") throw Error("checkpoint: missing config block");
  std::getline(in, line);
  std::string ini;
  for (std::size_t i = 0; i < n_lines; ++i) {
    if (!std::getline(in, line)) throw Error("checkpoint: truncated config block");
    ini += line + "\n";
  }
  c.config = run::RunConfig::parse_ini(ini);
  if (!(in >> word >> c.step) || word != "step") throw Error("checkpoint: missing step");
  std::size_t n_params = 0, n_ema = 0;
  if (!(in >> word >> n_params >> n_ema) || word != "tensors") throw Error("checkpoint: missing tensor count");
  const auto read_set = [&](const char* tag, std::size_t count, ParamSet& set) {
    for (std::size_t t = 0; t < count; ++t) {
      std::string id;
      std::size_t rank = 0;
      if (!(in >> word >> id >> rank) || word != tag) throw Error(std::string("checkpoint: expected ") + tag + " entry");
      std::vector<std::size_t> shape(rank);
      for (auto& d : shape) {
        if (!(in >> d)) throw Error("checkpoint: bad shape for '" + id + "'");
      }
      Tensor v(shape);
      for (std::size_t i = 0; i < v.size(); ++i) {
        std::string tok;
        if (!(in >> tok)) throw Error("checkpoint: truncated values for '" + id + "'");
        v[i] = parse_hex(tok);
      }
      set.add(id, std::move(v));
    }
  };
  read_set("param", n_params, c.params);
  read_set("ema", n_ema, c.ema);
  if (!(in >> word) || word != "end") throw Error("checkpoint: missing end marker");
  return c;
}

void Checkpoint::save(const std::string& path) const { io::write_file_atomic(path, serialize()); }

Checkpoint Checkpoint::load(const std::string& path) { return parse(io::read_file(path)); }

}  // namespace dpadaln::ckpt
