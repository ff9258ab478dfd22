#include "codemap/config.hpp"

#include <sstream>

#include "codemap/error.hpp"
#include "codemap/io.hpp"
#include "codemap/learned_decoder.hpp"

namespace codemap {

namespace {

FactorType factor_type(const std::string& name, const std::string& context) {
  if (name == "photometric") return FactorType::photometric;
  if (name == "reprojection") return FactorType::reprojection;
  if (name == "geometric") return FactorType::geometric;
  if (name == "prior") return FactorType::prior;
  throw Error(ErrorCode::invalid_argument, context + ": unknown factor '" + name + "'");
}

}  // namespace

void set_enabled_factors(FactorSettings& s, const std::string& list) {
  s.photometric = s.reprojection = s.geometric = s.prior = false;
  std::stringstream in(list);
  std::string name;
  while (std::getline(in, name, ',')) {
    if (name.empty() || name == "none") continue;
    switch (factor_type(name, "factors")) {
      case FactorType::photometric: s.photometric = true; break;
      case FactorType::reprojection: s.reprojection = true; break;
      case FactorType::geometric: s.geometric = true; break;
      case FactorType::prior: s.prior = true; break;
    }
  }
}

void RunConfig::validate() const {
  const auto bad = [](const std::string& why) { throw Error(ErrorCode::invalid_argument, "config: " + why); };
  if (code_size < 1) bad("code_size must be >= 1");
  if (window_size < 1) bad("window_size must be >= 1");
  if (!(proximity_scale > 0.0)) bad("proximity_scale must be positive");
  const FactorSettings& f = problem.factors;
  if (f.photometric_weight < 0 || f.reprojection_weight < 0 || f.geometric_weight < 0 || !(f.prior_weight > 0))
    bad("factor weights must be >= 0 (prior > 0)");
  if (!(f.photometric_huber.delta > 0) || !(f.reprojection_huber.delta > 0) || !(f.geometric_huber.delta > 0))
    bad("huber deltas must be positive");
  if (f.sample_stride < 1) bad("sample_stride must be >= 1");
  const SolverSettings& s = problem.solver;
  if (s.max_iterations < 0) bad("max_iterations must be >= 0");
  if (!(s.initial_damping > 0)) bad("initial_damping must be positive");
  if (!(s.relative_tolerance >= 0) || !(s.step_tolerance >= 0) || !(s.gradient_tolerance >= 0)) bad("tolerances must be >= 0");
  if (s.jobs < 1) bad("jobs must be >= 1");
  if (!(fusion.voxel_size > 0) || !(fusion.truncation > 0) || !(fusion.max_weight > 0))
    bad("fusion parameters must be positive");
  if (fusion.edge_radius < 0) bad("edge_radius must be >= 0");
  if (decoder != "analytic" && !std::filesystem::exists(decoder))
    throw Error(ErrorCode::not_found, "config: decoder weights not found: " + decoder);
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  RunConfig c;
  for (const auto& line : tokenize_lines(text)) {
    const std::string& key = line.tokens[0];
    const std::string ctx = "config line " + std::to_string(line.line);
    const auto arity = [&](std::size_t n) {
      if (line.tokens.size() != n)
        throw Error(ErrorCode::format, ctx + ": '" + key + "' expects " + std::to_string(n - 1) + " values");
    };
    const auto num = [&](std::size_t i) { return parse_number(line.tokens[i], ctx); };
    FactorSettings& f = c.problem.factors;
    SolverSettings& s = c.problem.solver;
    if (key == "decoder") {
      arity(2);
      c.decoder = line.tokens[1];
      if (c.decoder != "analytic" && std::filesystem::path(c.decoder).is_relative() && !base_dir.empty())
        c.decoder = (base_dir / c.decoder).string();
    } else if (key == "code_size") {
      arity(2);
      c.code_size = static_cast<int>(num(1));
    } else if (key == "window_size") {
      arity(2);
      c.window_size = static_cast<int>(num(1));
    } else if (key == "factors") {
      arity(2);
      set_enabled_factors(f, line.tokens[1]);
    } else if (key == "weight") {
      arity(3);
      const double w = num(2);
      switch (factor_type(line.tokens[1], ctx)) {
        case FactorType::photometric: f.photometric_weight = w; break;
        case FactorType::reprojection: f.reprojection_weight = w; break;
        case FactorType::geometric: f.geometric_weight = w; break;
        case FactorType::prior: f.prior_weight = w; break;
      }
    } else if (key == "huber") {
      arity(3);
      const double d = num(2);
      switch (factor_type(line.tokens[1], ctx)) {
        case FactorType::photometric: f.photometric_huber.delta = d; break;
        case FactorType::reprojection: f.reprojection_huber.delta = d; break;
        case FactorType::geometric: f.geometric_huber.delta = d; break;
        case FactorType::prior: throw Error(ErrorCode::invalid_argument, ctx + ": the prior is not robustified");
      }
    } else if (key == "sample_stride") {
      arity(2);
      f.sample_stride = static_cast<int>(num(1));
    } else if (key == "max_iterations") {
      arity(2);
      s.max_iterations = static_cast<int>(num(1));
    } else if (key == "initial_damping") {
      arity(2);
      s.initial_damping = num(1);
    } else if (key == "relative_tolerance") {
      arity(2);
      s.relative_tolerance = num(1);
    } else if (key == "gradient_tolerance") {
      arity(2);
      s.gradient_tolerance = num(1);
    } else if (key == "step_tolerance") {
      arity(2);
      s.step_tolerance = num(1);
    } else if (key == "pyramid") {
      arity(2);
      s.pyramid = num(1) != 0.0;
    } else if (key == "jobs") {
      arity(2);
      s.jobs = static_cast<int>(num(1));
    } else if (key == "voxel_size") {
      arity(2);
      c.fusion.voxel_size = num(1);
    } else if (key == "truncation") {
      arity(2);
      c.fusion.truncation = num(1);
    } else if (key == "max_weight") {
      arity(2);
      c.fusion.max_weight = static_cast<float>(num(1));
    } else if (key == "edge_radius") {
      arity(2);
      c.fusion.edge_radius = static_cast<int>(num(1));
    } else if (key == "proximity_scale") {
      arity(2);
      c.proximity_scale = num(1);
    } else if (key == "seed") {
      arity(2);
      c.seed = static_cast<std::uint64_t>(num(1));
    } else {
      throw Error(ErrorCode::format, ctx + ": unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

RunConfig read_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::not_found, "config file not found: " + path.string());
  return parse_run_config(read_text_file(path), path.parent_path());
}

std::string print_run_config(const RunConfig& c) {
  const FactorSettings& f = c.problem.factors;
  const SolverSettings& s = c.problem.solver;
  std::string factors;
  for (FactorType t : {FactorType::photometric, FactorType::reprojection, FactorType::geometric, FactorType::prior})
    if (f.enabled(t)) factors += (factors.empty() ? "" : ",") + std::string(to_string(t));
  std::ostringstream o;
  o << "decoder " << c.decoder << "\n"
    << "code_size " << c.code_size << "\n"
    << "window_size " << c.window_size << "\n"
    << "factors " << (factors.empty() ? "none" : factors) << "\n"
    << "weight photometric " << format_number(f.photometric_weight) << "\n"
    << "weight reprojection " << format_number(f.reprojection_weight) << "\n"
    << "weight geometric " << format_number(f.geometric_weight) << "\n"
    << "weight prior " << format_number(f.prior_weight) << "\n"
    << "huber photometric " << format_number(f.photometric_huber.delta) << "\n"
    << "huber reprojection " << format_number(f.reprojection_huber.delta) << "\n"
    << "huber geometric " << format_number(f.geometric_huber.delta) << "\n"
    << "sample_stride " << f.sample_stride << "\n"
    << "max_iterations " << s.max_iterations << "\n"
    << "initial_damping " << format_number(s.initial_damping) << "\n"
    << "relative_tolerance " << format_number(s.relative_tolerance) << "\n"
    << "gradient_tolerance " << format_number(s.gradient_tolerance) << "\n"
    << "step_tolerance " << format_number(s.step_tolerance) << "\n"
    << "pyramid " << (s.pyramid ? 1 : 0) << "\n"
    << "jobs " << s.jobs << "\n"
    << "voxel_size " << format_number(c.fusion.voxel_size) << "\n"
    << "truncation " << format_number(c.fusion.truncation) << "\n"
    << "max_weight " << format_number(c.fusion.max_weight) << "\n"
    << "edge_radius " << c.fusion.edge_radius << "\n"
    << "proximity_scale " << format_number(c.proximity_scale) << "\n"
    << "seed " << c.seed << "\n";
  return o.str();
}

DecoderFactory make_decoder_factory(const RunConfig& config) {
  if (config.decoder == "analytic") {
    AnalyticDecoderConfig a;
    a.code_size = config.code_size;
    a.proximity.scale = config.proximity_scale;
    return analytic_decoder_factory(a);
  }
  auto net = std::make_shared<const LearnedDecoder>(read_weights(config.decoder));
  if (net->code_size() != config.code_size)
    throw Error(ErrorCode::dimension_mismatch, "config: code_size differs from the decoder weights");
  return [net](const ConditioningSet& cond) { return std::make_shared<const LinearDecoder>(net->linearize(cond)); };
}

}  // namespace codemap
