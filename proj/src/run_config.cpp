#include "dpadaln/run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <fmt/format.h>
#include <functional>
#include <limits>
#include <sstream>

#include "dpadaln/atomic_io.hpp"

namespace dpadaln::run {

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::non_dp: return "non_dp";
    case Mode::dp_vanilla: return "dp_vanilla";
    case Mode::dp_aware: return "dp_aware";
  }
  return "non_dp";
}

Mode parse_mode(std::string_view s) {
  if (s == "non_dp") return Mode::non_dp;
  if (s == "dp_vanilla") return Mode::dp_vanilla;
  if (s == "dp_aware") return Mode::dp_aware;
  throw Error("run.mode: unknown mode '" + std::string(s) + "' (expected non_dp, dp_vanilla or dp_aware)");
}

RunConfig RunConfig::desk() {
  RunConfig c;
  c.model = model::ModelConfig::desk();
  c.bounds.c_max = 2.9;
  c.bounds.gamma_max = 2.6;
  c.bounds.beta_max = 1.45;
  c.bounds.alpha_max = 0.75;
  c.optim.warmup_steps = 100;
  c.masks.pred_len_min = 6;
  c.masks.pred_len_max = 12;
  c.masks.blocks_min = 4;
  c.masks.blocks_max = 8;
  return c;
}

RunConfig RunConfig::paper() {
  RunConfig c = desk();
  c.profile = "paper";
  c.model = model::ModelConfig::paper();
  c.steps = 20000;
  c.batch = 96;
  c.val_every = 1000;
  c.optim = dp::OptimizerSettings{};
  c.diffusion_steps = 1000;
  c.data.window_stride = 24;
  c.data.length = 23136;
  c.masks.pred_len_min = 24;
  c.masks.pred_len_max = 96;
  c.masks.blocks_min = 4;
  c.masks.blocks_max = 8;
  return c;
}

RunConfig RunConfig::for_profile(std::string_view profile) {
  if (profile == "desk") return desk();
  if (profile == "paper") return paper();
  throw Error("run.profile: unknown profile '" + std::string(profile) + "' (expected desk or paper)");
}

bool RunConfig::bounds_enabled() const {
  switch (bounds_active) {
    case BoundsActive::on: return true;
    case BoundsActive::off: return false;
    case BoundsActive::automatic: return mode == Mode::dp_aware;
  }
  return false;
}

model::BoundConfig RunConfig::effective_bounds() const {
  if (!bounds_enabled()) {
    model::BoundConfig b = model::BoundConfig::unbounded();
    b.op = bounds.op;
    return b;
  }
  model::BoundConfig b = bounds.scaled(tightness);
  if (b.band_eps) b.band_eps = *b.band_eps * tightness;
  return b;
}

dp::DPConfig RunConfig::effective_dp() const {
  dp::DPConfig d = dp;
  d.batch_B = batch;
  if (mode == Mode::non_dp) {
    d.clip_C = std::numeric_limits<double>::infinity();
    d.noise_sigma = 0.0;
  }
  return d;
}

diffusion::DiffusionSchedule RunConfig::schedule() const {
  return diffusion::build_schedule(diffusion_steps, beta_start, beta_end);
}

void RunConfig::validate() const {
  std::vector<std::string> problems;
  const auto check = [&](bool ok, const char* key, const std::string& what) {
    if (!ok) problems.push_back(std::string(key) + ": " + what);
  };
  const auto guarded = [&](const char* key, const std::function<void()>& f) {
    try {
      f();
    } catch (const Error& e) {
      problems.push_back(std::string(key) + ": " + e.what());
    }
  };
  check(profile == "desk" || profile == "paper", "run.profile", "expected desk or paper");
  check(steps >= 1, "run.steps", "must be at least 1");
  check(batch >= 1, "run.batch", "must be at least 1");
  check(log_stride >= 1, "run.log_stride", "must be at least 1");
  check(val_every >= 1, "run.val_every", "must be at least 1");
  guarded("model", [&] { model.validate(); });
  guarded("bounds", [&] { bounds.validate(); });
  check(tightness > 0.0 && std::isfinite(tightness), "bounds.tightness", "must be finite and positive");
  guarded("bounds", [&] { effective_bounds().validate(); });
  guarded("dp", [&] {
    dp::DPConfig d = dp;
    d.batch_B = batch;
    d.validate();
  });
  guarded("optim", [&] { optim.validate(); });
  guarded("diffusion", [&] { (void)schedule(); });
  check(data.source == "synthetic" || data.source == "csv", "data.source", "expected synthetic or csv");
  check(data.source != "csv" || !data.csv_path.empty(), "data.csv_path", "required when data.source = csv");
  check(data.split == "chrono" || data.split == "ett", "data.split", "expected chrono or ett");
  check(data.window_stride >= 1, "data.window_stride", "must be at least 1");
  check(data.rare_event_prob >= 0.0 && data.rare_event_prob <= 0.1, "data.rare_event_prob", "must lie in [0, 0.1]");
  check(data.rare_scale >= 1.0, "data.rare_scale", "must be >= 1");
  check(data.length >= model.seq_len * 8, "data.length", "too short for the window length");
  const double wsum = masks.random_weight + masks.block_weight + masks.stride_weight;
  check(masks.random_weight >= 0 && masks.block_weight >= 0 && masks.stride_weight >= 0 && wsum > 0, "masks.*_weight",
        "weights must be >= 0 with a positive sum");
  check(masks.ratio_min > 0 && masks.ratio_min <= masks.ratio_max && masks.ratio_max < 1, "masks.ratio_min/ratio_max",
        "need 0 < min <= max < 1");
  check(masks.pred_len_min >= 1 && masks.pred_len_min <= masks.pred_len_max && masks.pred_len_max < model.seq_len,
        "masks.pred_len_min/pred_len_max", "need 1 <= min <= max < seq_len");
  check(masks.blocks_min >= 1 && masks.blocks_min <= masks.blocks_max && 2 * masks.blocks_max <= model.seq_len,
        "masks.blocks_min/blocks_max", "need 1 <= min <= max and 2 max <= seq_len");
  if (!problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += " [" + p + "]";
    throw Error(msg);
  }
}

namespace {

std::string fmt_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{:.17g}", v);
}

double parse_double(const std::string& key, const std::string& s) {
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw Error(key + ": '" + s + "' is not a number");
  return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw Error(key + ": '" + s + "' is not a non-negative integer");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw Error(key + ": '" + s + "' is not a boolean");
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define DPADALN_FIELD(key, expr, kind)                                                    \
  {                                                                                       \
    key, Field {                                                                          \
      [](const RunConfig& c) { return to_text_##kind(c.expr); },                          \
          [](RunConfig& c, const std::string& s) { c.expr = from_text_##kind(key, s); } \
    }                                                                                     \
  }

std::string to_text_f64(double v) { return fmt_double(v); }
double from_text_f64(const std::string& k, const std::string& s) { return parse_double(k, s); }
std::string to_text_size(std::size_t v) { return std::to_string(v); }
std::size_t from_text_size(const std::string& k, const std::string& s) { return parse_uint(k, s); }
std::string to_text_u64(std::uint64_t v) { return std::to_string(v); }
std::uint64_t from_text_u64(const std::string& k, const std::string& s) { return parse_uint(k, s); }
std::string to_text_str(const std::string& v) { return v; }
std::string from_text_str(const std::string&, const std::string& s) { return s; }
std::string to_text_bool(bool v) { return v ? "true" : "false"; }
bool from_text_bool(const std::string& k, const std::string& s) { return parse_bool(k, s); }

// Ordered list of every key; the order defines the layout of to_ini().
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"run.profile", Field{[](const RunConfig& c) { return c.profile; },
                            [](RunConfig& c, const std::string& s) { c.profile = s; }}},
      {"run.mode", Field{[](const RunConfig& c) { return std::string(to_string(c.mode)); },
                         [](RunConfig& c, const std::string& s) { c.mode = parse_mode(s); }}},
      DPADALN_FIELD("run.seed", seed, u64),
      DPADALN_FIELD("run.steps", steps, size),
      DPADALN_FIELD("run.batch", batch, size),
      DPADALN_FIELD("run.log_stride", log_stride, size),
      DPADALN_FIELD("run.val_every", val_every, size),
      DPADALN_FIELD("run.val_windows", val_windows, size),
      DPADALN_FIELD("model.depth", model.depth, size),
      DPADALN_FIELD("model.hidden", model.hidden, size),
      DPADALN_FIELD("model.heads", model.heads, size),
      DPADALN_FIELD("model.seq_len", model.seq_len, size),
      DPADALN_FIELD("model.channels", model.channels, size),
      DPADALN_FIELD("model.cond_dim", model.cond_dim, size),
      DPADALN_FIELD("model.mlp_ratio", model.mlp_ratio, size),
      DPADALN_FIELD("model.time_embed_dim", model.time_embed_dim, size),
      {"bounds.active",
       Field{[](const RunConfig& c) {
               return std::string(c.bounds_active == BoundsActive::on    ? "on"
                                  : c.bounds_active == BoundsActive::off ? "off"
                                                                         : "auto");
             },
             [](RunConfig& c, const std::string& s) {
               if (s == "auto") c.bounds_active = BoundsActive::automatic;
               else if (s == "on") c.bounds_active = BoundsActive::on;
               else if (s == "off") c.bounds_active = BoundsActive::off;
               else throw Error("bounds.active: expected auto, on or off");
             }}},
      DPADALN_FIELD("bounds.c_max", bounds.c_max, f64),
      DPADALN_FIELD("bounds.gamma_max", bounds.gamma_max, f64),
      DPADALN_FIELD("bounds.beta_max", bounds.beta_max, f64),
      DPADALN_FIELD("bounds.alpha_max", bounds.alpha_max, f64),
      DPADALN_FIELD("bounds.tightness", tightness, f64),
      {"bounds.op", Field{[](const RunConfig& c) { return std::string(model::to_string(c.bounds.op)); },
                          [](RunConfig& c, const std::string& s) { c.bounds.op = model::parse_bound_operator(s); }}},
      {"bounds.band_eps", Field{[](const RunConfig& c) { return c.bounds.band_eps ? fmt_double(*c.bounds.band_eps) : "auto"; },
                                [](RunConfig& c, const std::string& s) {
                                  if (s == "auto") c.bounds.band_eps.reset();
                                  else c.bounds.band_eps = parse_double("bounds.band_eps", s);
                                }}},
      DPADALN_FIELD("bounds.bound_condition", bounds.bound_condition, bool),
      DPADALN_FIELD("bounds.bound_modulation", bounds.bound_modulation, bool),
      DPADALN_FIELD("dp.clip_C", dp.clip_C, f64),
      DPADALN_FIELD("dp.noise_sigma", dp.noise_sigma, f64),
      DPADALN_FIELD("optim.lr", optim.lr, f64),
      DPADALN_FIELD("optim.weight_decay", optim.weight_decay, f64),
      DPADALN_FIELD("optim.warmup_steps", optim.warmup_steps, size),
      DPADALN_FIELD("optim.beta1", optim.beta1, f64),
      DPADALN_FIELD("optim.beta2", optim.beta2, f64),
      DPADALN_FIELD("optim.eps", optim.eps, f64),
      DPADALN_FIELD("optim.ema_decay", optim.ema_decay, f64),
      DPADALN_FIELD("diffusion.steps", diffusion_steps, size),
      DPADALN_FIELD("diffusion.beta_start", beta_start, f64),
      DPADALN_FIELD("diffusion.beta_end", beta_end, f64),
      DPADALN_FIELD("data.source", data.source, str),
      DPADALN_FIELD("data.seed", data.seed, u64),
      DPADALN_FIELD("data.csv_path", data.csv_path, str),
      DPADALN_FIELD("data.split", data.split, str),
      DPADALN_FIELD("data.rows_per_month", data.rows_per_month, size),
      DPADALN_FIELD("data.length", data.length, size),
      DPADALN_FIELD("data.rare_event_prob", data.rare_event_prob, f64),
      DPADALN_FIELD("data.rare_scale", data.rare_scale, f64),
      DPADALN_FIELD("data.window_stride", data.window_stride, size),
      DPADALN_FIELD("masks.random_weight", masks.random_weight, f64),
      DPADALN_FIELD("masks.block_weight", masks.block_weight, f64),
      DPADALN_FIELD("masks.stride_weight", masks.stride_weight, f64),
      DPADALN_FIELD("masks.ratio_min", masks.ratio_min, f64),
      DPADALN_FIELD("masks.ratio_max", masks.ratio_max, f64),
      DPADALN_FIELD("masks.pred_len_min", masks.pred_len_min, size),
      DPADALN_FIELD("masks.pred_len_max", masks.pred_len_max, size),
      DPADALN_FIELD("masks.blocks_min", masks.blocks_min, size),
      DPADALN_FIELD("masks.blocks_max", masks.blocks_max, size),
  };
  return table;
}

#undef DPADALN_FIELD

const Field& field(const std::string& key) {
  for (const auto& [k, f] : fields()) {
    if (k == key) return f;
  }
  throw Error("unknown configuration key '" + key + "'");
}

}  // namespace

std::string RunConfig::to_ini() const {
  std::string out;
  std::string section;
  for (const auto& [key, f] : fields()) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + f.get(*this) + "\n";
  }
  return out;
}

RunConfig RunConfig::parse_ini(std::string_view text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(std::string("config: ") + e.what());
  }
  std::string profile = "desk";
  if (auto p = tree.get_optional<std::string>("run.profile")) profile = *p;
  RunConfig c = for_profile(profile);
  for (const auto& [sec, body] : tree) {
    if (body.empty() && !body.data().empty()) throw Error("config: key '" + sec + "' outside any section");
    for (const auto& [key, value] : body) field(sec + "." + key).set(c, value.data());
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) { return parse_ini(io::read_file(path)); }

void RunConfig::apply_overrides(const std::vector<std::string>& assignments) {
  // The profile goes first so later keys override its defaults.
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw Error("override '" + a + "' is not of the form section.key=value");
    if (a.substr(0, eq) == "run.profile") {
      RunConfig fresh = for_profile(a.substr(eq + 1));
      *this = fresh;
    }
  }
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    const std::string key = a.substr(0, eq);
    if (key == "run.profile") continue;
    field(key).set(*this, a.substr(eq + 1));
  }
}

}  // namespace dpadaln::run
