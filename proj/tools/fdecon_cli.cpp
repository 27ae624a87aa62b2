// fdecon command-line front end. Links only the C API.

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fdecon/fdecon.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kConfig = 2, kIo = 3, kConvergence = 4, kBridge = 5 };

struct CliError {
  int code;
  std::string message;
};

int exit_code_for(fdecon_status s) {
  switch (s) {
    case FDECON_OK: return kOk;
    case FDECON_ERR_INVALID_ARGUMENT: return kConfig;
    case FDECON_ERR_IO:
    case FDECON_ERR_FORMAT: return kIo;
    case FDECON_ERR_CONVERGENCE:
    case FDECON_ERR_DIVERGENCE: return kConvergence;
    case FDECON_ERR_BRIDGE: return kBridge;
    case FDECON_ERR_INTERNAL: return kInternal;
  }
  return kInternal;
}

void check(fdecon_status s, const std::string& context) {
  if (s != FDECON_OK) throw CliError{exit_code_for(s), context + ": " + fdecon_last_error()};
}

[[noreturn]] void config_error(const std::string& what) { throw CliError{kConfig, what}; }

template <class T, void (*Destroy)(T*)>
struct Deleter {
  void operator()(T* p) const { Destroy(p); }
};

using ImagePtr = std::unique_ptr<fdecon_image, Deleter<fdecon_image, fdecon_image_destroy>>;
using StackPtr = std::unique_ptr<fdecon_stack, Deleter<fdecon_stack, fdecon_stack_destroy>>;
using EmittersPtr = std::unique_ptr<fdecon_emitters, Deleter<fdecon_emitters, fdecon_emitters_destroy>>;
using PsfPtr = std::unique_ptr<fdecon_psf, Deleter<fdecon_psf, fdecon_psf_destroy>>;
using DenoiserPtr = std::unique_ptr<fdecon_denoiser, Deleter<fdecon_denoiser, fdecon_denoiser_destroy>>;
using SupportPtr =
    std::unique_ptr<fdecon_support_result, Deleter<fdecon_support_result, fdecon_support_result_destroy>>;
using IntensityPtr =
    std::unique_ptr<fdecon_intensity_result, Deleter<fdecon_intensity_result, fdecon_intensity_result_destroy>>;

// ---------------------------------------------------------------------------
// Manifest

struct SupportSettings {
  std::string branch = "l1";  // l1 | l0 | tv | quadratic | bridge
  fdecon_support_config cfg{};
  double tv_strength = 0.05;
  std::size_t tv_inner_iters = 5000;
  double tv_gap_tol = 1e-10;
  double quadratic_alpha = 0.5;
  std::vector<std::string> bridge_command;
  std::string bridge_host;
  int bridge_port = 0;
  int bridge_timeout_ms = 30000;
};

// Raw little-endian frames, frame-major, after an optional fixed-size header.
struct ImportSettings {
  std::string path;
  std::string dtype = "u16";  // u16 | f32
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t header_bytes = 0;
  double baseline = 0.0;  // subtracted from every value
};

struct Manifest {
  std::string output_dir = "out";
  std::optional<ImportSettings> import;
  fdecon_sim_params sim{};
  SupportSettings support;
  fdecon_intensity_config intensity{};
  double tolerance_nm = 40.0;

  Manifest() {
    fdecon_sim_params_default(&sim);
    fdecon_support_config_default(&support.cfg);
    fdecon_intensity_config_default(&intensity);
    intensity.max_iters = 5000;
  }
};

// Reads known keys from a JSON object and rejects anything else.
class Reader {
public:
  Reader(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) config_error(where_ + " must be an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.count(key)) config_error("unknown key \"" + key + "\" in " + where_);
    }
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception& e) {
      config_error(where_ + "." + key + ": " + e.what());
    }
  }

  void optional_number(const char* key, double& out, double unset) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    if (obj_.at(key).is_null()) {
      out = unset;
      return;
    }
    get(key, out);
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return obj_.contains(key) ? &obj_.at(key) : nullptr;
  }

private:
  const json& obj_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_manifest_json(const json& root, Manifest& m) {
  Reader r(root, "manifest");
  std::uint64_t seed = m.sim.seed;
  r.get("seed", seed);
  m.sim.seed = seed;
  r.get("output_dir", m.output_dir);

  if (const json* s = r.child("simulation")) {
    Reader sr(*s, "simulation");
    sr.get("image_size_px", m.sim.image_size_px);
    sr.get("pixel_size_nm", m.sim.pixel_size_nm);
    sr.get("fwhm_nm", m.sim.fwhm_nm);
    sr.get("n_filaments", m.sim.n_filaments);
    sr.get("emitters_per_filament", m.sim.emitters_per_filament);
    sr.get("frames", m.sim.frames);
    sr.get("noise_variance", m.sim.noise_variance);
    if (const json* b = sr.child("blinking")) {
      Reader br(*b, "simulation.blinking");
      br.get("rate_on", m.sim.rate_on);
      br.get("rate_off", m.sim.rate_off);
      br.get("mean_photons_on", m.sim.mean_photons_on);
      br.get("photon_jitter_fraction", m.sim.photon_jitter_fraction);
    }
    if (const json* b = sr.child("background")) {
      Reader br(*b, "simulation.background");
      std::string shape = m.sim.background_shape == FDECON_BACKGROUND_RAISED_COSINE ? "raised_cosine" : "constant";
      br.get("shape", shape);
      if (shape == "constant") {
        m.sim.background_shape = FDECON_BACKGROUND_CONSTANT;
      } else if (shape == "raised_cosine") {
        m.sim.background_shape = FDECON_BACKGROUND_RAISED_COSINE;
      } else {
        config_error("simulation.background.shape must be \"constant\" or \"raised_cosine\"");
      }
      br.get("level", m.sim.background_level);
      br.get("bump", m.sim.background_bump);
    }
  }

  if (const json* s = r.child("support")) {
    Reader sr(*s, "support");
    auto& c = m.support.cfg;
    sr.get("branch", m.support.branch);
    sr.get("tau", c.tau);
    sr.get("lambda", c.lambda);
    sr.get("max_iters", c.max_iters);
    sr.get("tol", c.tol);
    sr.get("penalty", c.penalty);
    bool relative = c.penalty_relative != 0;
    sr.get("penalty_relative", relative);
    c.penalty_relative = relative;
    sr.optional_number("support_threshold", c.support_threshold, std::numeric_limits<double>::quiet_NaN());
    bool normalize = c.normalize_operator != 0;
    sr.get("normalize_operator", normalize);
    c.normalize_operator = normalize;
    sr.get("sigma", c.sigma);
    bool normalize_input = c.normalize_denoiser_input != 0;
    sr.get("normalize_denoiser_input", normalize_input);
    c.normalize_denoiser_input = normalize_input;
    if (const json* t = sr.child("tv")) {
      Reader tr(*t, "support.tv");
      tr.get("strength", m.support.tv_strength);
      tr.get("inner_iters", m.support.tv_inner_iters);
      tr.get("gap_tol", m.support.tv_gap_tol);
    }
    if (const json* q = sr.child("quadratic")) {
      Reader qr(*q, "support.quadratic");
      qr.get("alpha", m.support.quadratic_alpha);
    }
    if (const json* b = sr.child("bridge")) {
      Reader br(*b, "support.bridge");
      br.get("command", m.support.bridge_command);
      br.get("host", m.support.bridge_host);
      br.get("port", m.support.bridge_port);
      br.get("timeout_ms", m.support.bridge_timeout_ms);
    }
  }

  if (const json* s = r.child("intensity")) {
    Reader ir(*s, "intensity");
    ir.optional_number("mu", m.intensity.mu, 0.0);
    ir.optional_number("beta", m.intensity.beta, 0.0);
    bool estimate = m.intensity.estimate_background != 0;
    ir.get("estimate_background", estimate);
    m.intensity.estimate_background = estimate;
    ir.get("max_iters", m.intensity.max_iters);
    ir.get("tol", m.intensity.tol);
    bool accelerated = m.intensity.accelerated != 0;
    ir.get("accelerated", accelerated);
    m.intensity.accelerated = accelerated;
  }

  if (const json* s = r.child("import")) {
    Reader ir(*s, "import");
    ImportSettings imp;
    ir.get("path", imp.path);
    ir.get("dtype", imp.dtype);
    ir.get("frames", imp.frames);
    ir.get("height", imp.height);
    ir.get("width", imp.width);
    ir.get("header_bytes", imp.header_bytes);
    ir.get("baseline", imp.baseline);
    if (imp.dtype != "u16" && imp.dtype != "f32") config_error("import.dtype must be \"u16\" or \"f32\"");
    m.import = imp;
  }

  if (const json* s = r.child("metrics")) {
    Reader mr(*s, "metrics");
    mr.get("tolerance_nm", m.tolerance_nm);
  }

  const std::set<std::string> branches = {"l1", "l0", "tv", "quadratic", "bridge"};
  if (!branches.count(m.support.branch)) config_error("support.branch must be one of l1, l0, tv, quadratic, bridge");
  if (m.support.branch == "bridge" && m.support.bridge_command.empty() && m.support.bridge_host.empty()) {
    config_error("support.bridge needs a command or a host");
  }
}

json nullable(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

// Every parameter that affects a run, with defaults filled in.
json manifest_to_json(const Manifest& m) {
  const auto& s = m.sim;
  const auto& c = m.support.cfg;
  json bridge = {{"command", m.support.bridge_command},
                 {"host", m.support.bridge_host},
                 {"port", m.support.bridge_port},
                 {"timeout_ms", m.support.bridge_timeout_ms}};
  json out{
      {"seed", s.seed},
      {"output_dir", m.output_dir},
      {"simulation",
       {{"image_size_px", s.image_size_px},
        {"pixel_size_nm", s.pixel_size_nm},
        {"fwhm_nm", s.fwhm_nm},
        {"n_filaments", s.n_filaments},
        {"emitters_per_filament", s.emitters_per_filament},
        {"frames", s.frames},
        {"noise_variance", s.noise_variance},
        {"blinking",
         {{"rate_on", s.rate_on},
          {"rate_off", s.rate_off},
          {"mean_photons_on", s.mean_photons_on},
          {"photon_jitter_fraction", s.photon_jitter_fraction}}},
        {"background",
         {{"shape", s.background_shape == FDECON_BACKGROUND_RAISED_COSINE ? "raised_cosine" : "constant"},
          {"level", s.background_level},
          {"bump", s.background_bump}}}}},
      {"support",
       {{"branch", m.support.branch},
        {"tau", c.tau},
        {"lambda", c.lambda},
        {"max_iters", c.max_iters},
        {"tol", c.tol},
        {"penalty", c.penalty},
        {"penalty_relative", c.penalty_relative != 0},
        {"support_threshold", nullable(c.support_threshold)},
        {"normalize_operator", c.normalize_operator != 0},
        {"sigma", c.sigma},
        {"normalize_denoiser_input", c.normalize_denoiser_input != 0},
        {"tv", {{"strength", m.support.tv_strength}, {"inner_iters", m.support.tv_inner_iters}, {"gap_tol", m.support.tv_gap_tol}}},
        {"quadratic", {{"alpha", m.support.quadratic_alpha}}},
        {"bridge", bridge}}},
      {"intensity",
       {{"mu", m.intensity.mu > 0.0 ? json(m.intensity.mu) : json(nullptr)},
        {"beta", m.intensity.beta > 0.0 ? json(m.intensity.beta) : json(nullptr)},
        {"estimate_background", m.intensity.estimate_background != 0},
        {"max_iters", m.intensity.max_iters},
        {"tol", m.intensity.tol},
        {"accelerated", m.intensity.accelerated != 0}}},
      {"metrics", {{"tolerance_nm", m.tolerance_nm}}},
  };
  if (m.import) {
    out["import"] = {{"path", m.import->path},         {"dtype", m.import->dtype},
                     {"frames", m.import->frames},     {"height", m.import->height},
                     {"width", m.import->width},       {"header_bytes", m.import->header_bytes},
                     {"baseline", m.import->baseline}};
  }
  return out;
}

Manifest load_manifest(const std::string& path) {
  Manifest m;
  if (path.empty()) return m;
  std::ifstream in(path);
  if (!in) throw CliError{kIo, "cannot open manifest " + path};
  json root;
  try {
    root = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    config_error("manifest " + path + ": " + e.what());
  }
  read_manifest_json(root, m);
  return m;
}

// ---------------------------------------------------------------------------
// Artifacts

void write_text(const fs::path& path, const std::string& text) {
  check(fdecon_write_file_atomic(path.c_str(), text.data(), text.size()), "write " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw CliError{kIo, "cannot create output directory " + dir.string() + ": " + ec.message()};
}

void save_image(const fdecon_image* image, const fs::path& dir, const std::string& stem, bool mask = false) {
  check(fdecon_image_write(image, (dir / (stem + ".fli")).c_str()), "write " + stem);
  check(fdecon_image_write_view(image, (dir / (stem + ".pgm")).c_str(), mask ? 1 : 0, 0.0, 1.0),
        "write " + stem + " view");
}

ImagePtr load_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError{kIo, "cannot open " + path};
  char magic[2] = {0, 0};
  in.read(magic, 2);
  fdecon_image* out = nullptr;
  if (magic[0] == 'P' && magic[1] == '5') {
    check(fdecon_image_read_view(path.c_str(), &out), "read " + path);
  } else {
    check(fdecon_image_read(path.c_str(), &out), "read " + path);
  }
  return ImagePtr(out);
}

std::vector<std::size_t> support_from_mask(const fdecon_image* mask) {
  const std::size_t n = fdecon_image_height(mask) * fdecon_image_width(mask);
  const double* data = fdecon_image_data(mask);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (data[i] > 0.5) out.push_back(i);
  }
  return out;
}

// JSON has no infinities.
json number(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

PsfPtr make_psf(double fwhm_nm, double pixel_size_nm) {
  fdecon_psf* psf = nullptr;
  check(fdecon_psf_create(fwhm_nm, pixel_size_nm, 0, &psf), "psf");
  return PsfPtr(psf);
}

DenoiserPtr make_denoiser(const SupportSettings& s) {
  fdecon_denoiser* d = nullptr;
  if (s.branch == "tv") {
    check(fdecon_denoiser_create_tv(s.tv_strength, s.tv_inner_iters, s.tv_gap_tol, &d), "tv denoiser");
  } else if (s.branch == "quadratic") {
    check(fdecon_denoiser_create_quadratic(s.quadratic_alpha, &d), "quadratic denoiser");
  } else if (s.branch == "bridge") {
    if (!s.bridge_command.empty()) {
      std::vector<const char*> argv;
      for (const auto& a : s.bridge_command) argv.push_back(a.c_str());
      check(fdecon_denoiser_create_subprocess(argv.data(), argv.size(), s.bridge_timeout_ms, &d), "bridge");
    } else {
      if (s.bridge_port <= 0 || s.bridge_port > 65535) config_error("support.bridge.port out of range");
      check(fdecon_denoiser_create_tcp(s.bridge_host.c_str(), static_cast<std::uint16_t>(s.bridge_port),
                                       s.bridge_timeout_ms, &d),
            "bridge");
    }
  }
  return DenoiserPtr(d);
}

void write_trace(const fs::path& path, const fdecon_support_result* r) {
  std::ostringstream out;
  out.precision(17);
  out << "iteration,objective,data_term,relative_change,running_min_change,noise_variance\n";
  const fdecon_trace_record* t = fdecon_support_result_trace(r);
  for (std::size_t i = 0; i < fdecon_support_result_trace_length(r); ++i) {
    out << t[i].iteration << ',';
    if (std::isnan(t[i].objective)) {
      out << "nan";
    } else {
      out << t[i].objective;
    }
    out << ',' << t[i].data_term << ',' << t[i].relative_change << ',' << t[i].running_min_change << ','
        << t[i].noise_variance << '\n';
  }
  write_text(path, out.str());
}

double final_objective(const fdecon_support_result* r) {
  const std::size_t n = fdecon_support_result_trace_length(r);
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : fdecon_support_result_trace(r)[n - 1].objective;
}

json support_record(const fdecon_support_result* r, const SupportSettings& s) {
  json warnings = json::array();
  for (std::size_t i = 0; i < fdecon_support_result_warning_count(r); ++i) {
    warnings.push_back(fdecon_support_result_warning(r, i));
  }
  return json{{"branch", s.branch},
              {"noise_variance", number(fdecon_support_result_noise_variance(r))},
              {"support_size", fdecon_support_result_support_size(r)},
              {"support_threshold", number(fdecon_support_result_threshold(r))},
              {"iterations", fdecon_support_result_iterations(r)},
              {"converged", fdecon_support_result_converged(r) != 0},
              {"objective_available", fdecon_support_result_objective_available(r) != 0},
              {"final_objective", number(final_objective(r))},
              {"warnings", warnings}};
}

// Runs the support solve; on an aborted solve the partial trace is still saved.
SupportPtr run_support(const fdecon_image* cov, const fdecon_psf* psf, const SupportSettings& s,
                       const fs::path& dir) {
  fdecon_support_config cfg = s.cfg;
  if (s.branch == "l0") cfg.prox = FDECON_PROX_L0;
  if (s.branch == "l1") cfg.prox = FDECON_PROX_L1;
  DenoiserPtr denoiser = make_denoiser(s);
  fdecon_support_result* raw = nullptr;
  const fdecon_status st = fdecon_solve_support(cov, psf, &cfg, denoiser.get(), &raw);
  SupportPtr result(raw);
  if (st != FDECON_OK) {
    const std::string message = fdecon_last_error();
    if (result) write_trace(dir / "support_trace.csv", result.get());
    throw CliError{exit_code_for(st), "solve-support: " + message};
  }
  write_trace(dir / "support_trace.csv", result.get());
  save_image(fdecon_support_result_estimate(result.get()), dir, "support_estimate");
  save_image(fdecon_support_result_mask(result.get()), dir, "support_mask", true);
  write_json(dir / "support.json", support_record(result.get(), s));
  return result;
}

IntensityPtr run_intensity(const fdecon_image* mean, const std::vector<std::size_t>& support, const fdecon_psf* psf,
                           const fdecon_intensity_config& cfg, const fs::path& dir) {
  if (support.empty()) throw CliError{kConvergence, "solve-intensity: the support is empty"};
  fdecon_intensity_result* raw = nullptr;
  check(fdecon_solve_intensity(mean, support.data(), support.size(), psf, &cfg, &raw), "solve-intensity");
  IntensityPtr r(raw);
  save_image(fdecon_intensity_result_intensity(r.get()), dir, "intensity");
  save_image(fdecon_intensity_result_background(r.get()), dir, "background");
  write_json(dir / "intensity.json",
             json{{"support_size", support.size()},
                  {"mu", fdecon_intensity_result_mu(r.get())},
                  {"beta", fdecon_intensity_result_beta(r.get())},
                  {"objective", number(fdecon_intensity_result_objective(r.get()))},
                  {"projected_gradient_norm", number(fdecon_intensity_result_projected_gradient_norm(r.get()))},
                  {"iterations", fdecon_intensity_result_iterations(r.get())},
                  {"converged", fdecon_intensity_result_converged(r.get()) != 0}});
  return r;
}

fdecon_match_summary match_mask(const fdecon_image* mask, const fdecon_emitters* truth, double tolerance_nm,
                                double pixel_size_nm) {
  fdecon_match_summary m{};
  check(fdecon_jaccard_mask(mask, truth, tolerance_nm, pixel_size_nm, &m), "metrics");
  return m;
}

json match_record(const fdecon_match_summary& m, double tolerance_nm) {
  return json{{"ji", m.jaccard},
              {"tolerance_nm", tolerance_nm},
              {"correct", m.correct},
              {"false_negatives", m.false_negatives},
              {"false_positives", m.false_positives},
              {"degenerate", m.degenerate != 0}};
}

double psnr_of(const fdecon_image* estimate, const fdecon_image* truth) {
  double v = 0.0;
  check(fdecon_psnr(estimate, truth, 0.0, &v), "psnr");
  return v;
}

void say(bool quiet, const std::string& line) {
  if (!quiet) std::cerr << line << '\n';
}

// ---------------------------------------------------------------------------
// Subcommands

struct Common {
  std::string manifest;
  std::string out_dir;
  bool quiet = false;
};

fs::path output_dir(const Common& c, const Manifest& m) { return c.out_dir.empty() ? fs::path(m.output_dir) : fs::path(c.out_dir); }

int cmd_simulate(const Common& c, std::optional<std::uint64_t> seed) {
  Manifest m = load_manifest(c.manifest);
  if (seed) m.sim.seed = *seed;
  const fs::path dir = output_dir(c, m);
  prepare_dir(dir);
  fdecon_simulation sim{};
  check(fdecon_simulate(&m.sim, &sim), "simulate");
  StackPtr stack(sim.stack);
  EmittersPtr emitters(sim.emitters);
  ImagePtr mean(sim.mean_emitter_image), mask(sim.support_mask), background(sim.background);

  check(fdecon_stack_write(stack.get(), (dir / "stack.flk").c_str()), "write stack");
  check(fdecon_emitters_write(emitters.get(), (dir / "emitters.txt").c_str()), "write emitters");
  save_image(mean.get(), dir, "truth_mean");
  save_image(mask.get(), dir, "truth_support", true);
  save_image(background.get(), dir, "truth_background");
  write_json(dir / "manifest.resolved.json", manifest_to_json(m));
  std::size_t t = 0, h = 0, w = 0;
  fdecon_stack_shape(stack.get(), &t, &h, &w);
  say(c.quiet, "simulated " + std::to_string(t) + " frames of " + std::to_string(h) + "x" + std::to_string(w) +
                   ", " + std::to_string(fdecon_emitters_count(emitters.get())) + " emitters -> " + dir.string());
  return kOk;
}

int cmd_covariance(const Common& c, const std::string& stack_path) {
  const Manifest m = load_manifest(c.manifest);
  const fs::path dir = output_dir(c, m);
  prepare_dir(dir);
  fdecon_stack* raw = nullptr;
  check(fdecon_stack_read(stack_path.c_str(), &raw), "read stack");
  StackPtr stack(raw);
  fdecon_image* cov = nullptr;
  fdecon_image* mean = nullptr;
  check(fdecon_auto_covariance(stack.get(), &cov), "covariance");
  ImagePtr cov_ptr(cov);
  check(fdecon_temporal_mean(stack.get(), &mean), "mean");
  ImagePtr mean_ptr(mean);
  save_image(cov, dir, "covariance");
  save_image(mean, dir, "mean");
  say(c.quiet, "covariance and mean -> " + dir.string());
  return kOk;
}

int cmd_import_raw(const Common& c, const std::string& input) {
  static_assert(std::endian::native == std::endian::little, "raw import assumes a little-endian host");
  const Manifest m = load_manifest(c.manifest);
  if (!m.import) config_error("import-raw needs an \"import\" section in the manifest");
  const ImportSettings& imp = *m.import;
  const std::string path = input.empty() ? imp.path : input;
  if (path.empty()) config_error("import-raw: no input path");
  if (imp.frames < 2 || imp.height == 0 || imp.width == 0) config_error("import: frames >= 2, height and width > 0");

  const std::size_t n = imp.frames * imp.height * imp.width;
  const std::size_t elem = imp.dtype == "u16" ? 2 : 4;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError{kIo, "cannot open " + path};
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t want = imp.header_bytes + n * elem;
  if (bytes.size() != want) {
    throw CliError{kIo, path + ": expected " + std::to_string(want) + " bytes for the declared layout, found " +
                            std::to_string(bytes.size())};
  }
  std::vector<float> data(n);
  const char* p = bytes.data() + imp.header_bytes;
  for (std::size_t i = 0; i < n; ++i) {
    double v;
    if (elem == 2) {
      std::uint16_t u;
      std::memcpy(&u, p + 2 * i, 2);
      v = u;
    } else {
      float f;
      std::memcpy(&f, p + 4 * i, 4);
      v = f;
    }
    data[i] = static_cast<float>(v - imp.baseline);
  }

  const fs::path dir = output_dir(c, m);
  prepare_dir(dir);
  fdecon_stack* raw = nullptr;
  check(fdecon_stack_create(imp.frames, imp.height, imp.width, m.sim.pixel_size_nm, m.sim.fwhm_nm, data.data(), &raw),
        "import");
  StackPtr stack(raw);
  check(fdecon_stack_write(stack.get(), (dir / "stack.flk").c_str()), "write stack");
  write_json(dir / "manifest.resolved.json", manifest_to_json(m));
  say(c.quiet, "imported " + std::to_string(imp.frames) + " frames -> " + (dir / "stack.flk").string());
  return kOk;
}

void psf_params(const Manifest& m, std::optional<double> fwhm, std::optional<double> pixel, double& f, double& p) {
  f = fwhm ? *fwhm : m.sim.fwhm_nm;
  p = pixel ? *pixel : m.sim.pixel_size_nm;
}

int cmd_solve_support(const Common& c, const std::string& cov_path, std::optional<double> fwhm,
                      std::optional<double> pixel, const std::string& branch) {
  Manifest m = load_manifest(c.manifest);
  if (!branch.empty()) m.support.branch = branch;
  const fs::path dir = output_dir(c, m);
  prepare_dir(dir);
  double f = 0.0, p = 0.0;
  psf_params(m, fwhm, pixel, f, p);
  PsfPtr psf = make_psf(f, p);
  ImagePtr cov = load_image(cov_path);
  SupportPtr r = run_support(cov.get(), psf.get(), m.support, dir);
  say(c.quiet, "support: " + std::to_string(fdecon_support_result_support_size(r.get())) + " pixels after " +
                   std::to_string(fdecon_support_result_iterations(r.get())) + " iterations -> " + dir.string());
  return kOk;
}

int cmd_solve_intensity(const Common& c, const std::string& mean_path, const std::string& mask_path,
                        std::optional<double> fwhm, std::optional<double> pixel) {
  const Manifest m = load_manifest(c.manifest);
  const fs::path dir = output_dir(c, m);
  prepare_dir(dir);
  double f = 0.0, p = 0.0;
  psf_params(m, fwhm, pixel, f, p);
  PsfPtr psf = make_psf(f, p);
  ImagePtr mean = load_image(mean_path);
  ImagePtr mask = load_image(mask_path);
  IntensityPtr r = run_intensity(mean.get(), support_from_mask(mask.get()), psf.get(), m.intensity, dir);
  say(c.quiet, "intensity: " + std::to_string(fdecon_intensity_result_iterations(r.get())) + " iterations -> " +
                   dir.string());
  return kOk;
}

struct MetricsArgs {
  std::string support_mask;
  std::string emitters;
  std::string truth_mask;
  std::string intensity;
  std::string truth_intensity;
  std::string mean;
  std::string output;
  std::optional<double> pixel;
  std::optional<double> tolerance;
};

int cmd_metrics(const Common& c, const MetricsArgs& a) {
  const Manifest m = load_manifest(c.manifest);
  const double pixel = a.pixel ? *a.pixel : m.sim.pixel_size_nm;
  const double tolerance = a.tolerance ? *a.tolerance : m.tolerance_nm;
  if (a.emitters.empty() == a.truth_mask.empty()) config_error("metrics needs exactly one of --emitters, --truth-mask");

  ImagePtr mask = load_image(a.support_mask);
  fdecon_match_summary match{};
  if (!a.emitters.empty()) {
    fdecon_emitters* e = nullptr;
    check(fdecon_emitters_read(a.emitters.c_str(), &e), "read emitters");
    EmittersPtr truth(e);
    match = match_mask(mask.get(), truth.get(), tolerance, pixel);
  } else {
    ImagePtr truth = load_image(a.truth_mask);
    auto centres = [&](const fdecon_image* img) {
      std::vector<double> xy;
      const std::size_t w = fdecon_image_width(img);
      for (std::size_t i : support_from_mask(img)) {
        xy.push_back((static_cast<double>(i % w) + 0.5) * pixel);
        xy.push_back((static_cast<double>(i / w) + 0.5) * pixel);
      }
      return xy;
    };
    const auto est = centres(mask.get()), gt = centres(truth.get());
    check(fdecon_jaccard_points(est.data(), est.size() / 2, gt.data(), gt.size() / 2, tolerance, &match), "metrics");
  }

  json record = match_record(match, tolerance);
  if (!a.intensity.empty() || !a.truth_intensity.empty()) {
    if (a.intensity.empty() || a.truth_intensity.empty()) {
      config_error("PSNR needs both --intensity and --truth-intensity");
    }
    ImagePtr est = load_image(a.intensity), truth = load_image(a.truth_intensity);
    record["psnr_intensity"] = number(psnr_of(est.get(), truth.get()));
    if (!a.mean.empty()) {
      ImagePtr mean = load_image(a.mean);
      record["psnr_mean"] = number(psnr_of(mean.get(), truth.get()));
    }
  }
  std::cout << record.dump(2) << '\n';
  if (!a.output.empty()) write_json(a.output, record);
  return kOk;
}

int cmd_pipeline(const Common& c, std::optional<std::uint64_t> seed) {
  Manifest m = load_manifest(c.manifest);
  if (seed) m.sim.seed = *seed;
  const fs::path dir = output_dir(c, m);
  prepare_dir(dir);
  write_json(dir / "manifest.resolved.json", manifest_to_json(m));

  fdecon_simulation sim{};
  check(fdecon_simulate(&m.sim, &sim), "simulate");
  StackPtr stack(sim.stack);
  EmittersPtr emitters(sim.emitters);
  ImagePtr truth_mean(sim.mean_emitter_image), truth_mask(sim.support_mask), truth_background(sim.background);
  check(fdecon_stack_write(stack.get(), (dir / "stack.flk").c_str()), "write stack");
  check(fdecon_emitters_write(emitters.get(), (dir / "emitters.txt").c_str()), "write emitters");
  save_image(truth_mean.get(), dir, "truth_mean");
  save_image(truth_mask.get(), dir, "truth_support", true);
  save_image(truth_background.get(), dir, "truth_background");
  say(c.quiet, "[1/5] simulate");

  fdecon_image* cov_raw = nullptr;
  fdecon_image* mean_raw = nullptr;
  check(fdecon_auto_covariance(stack.get(), &cov_raw), "covariance");
  ImagePtr cov(cov_raw);
  check(fdecon_temporal_mean(stack.get(), &mean_raw), "mean");
  ImagePtr mean(mean_raw);
  save_image(cov.get(), dir, "covariance");
  save_image(mean.get(), dir, "mean");
  say(c.quiet, "[2/5] covariance");

  PsfPtr psf = make_psf(m.sim.fwhm_nm, m.sim.pixel_size_nm);
  SupportPtr support = run_support(cov.get(), psf.get(), m.support, dir);
  say(c.quiet, "[3/5] solve-support: " + std::to_string(fdecon_support_result_support_size(support.get())) +
                   " pixels");

  const std::size_t n = fdecon_support_result_support_size(support.get());
  const std::vector<std::size_t> omega(fdecon_support_result_support(support.get()),
                                       fdecon_support_result_support(support.get()) + n);
  json record = match_record(match_mask(fdecon_support_result_mask(support.get()), emitters.get(), m.tolerance_nm,
                                        m.sim.pixel_size_nm),
                             m.tolerance_nm);
  record["noise_variance"] = number(fdecon_support_result_noise_variance(support.get()));
  record["support_size"] = n;
  record["support_iterations"] = fdecon_support_result_iterations(support.get());
  record["support_converged"] = fdecon_support_result_converged(support.get()) != 0;
  record["final_objective"] = number(final_objective(support.get()));
  record["psnr_mean"] = number(psnr_of(mean.get(), truth_mean.get()));

  if (!omega.empty()) {
    IntensityPtr intensity = run_intensity(mean.get(), omega, psf.get(), m.intensity, dir);
    record["psnr_intensity"] = number(psnr_of(fdecon_intensity_result_intensity(intensity.get()), truth_mean.get()));
    record["intensity_iterations"] = fdecon_intensity_result_iterations(intensity.get());
    record["intensity_converged"] = fdecon_intensity_result_converged(intensity.get()) != 0;
    say(c.quiet, "[4/5] solve-intensity");
  } else {
    record["psnr_intensity"] = nullptr;
    say(c.quiet, "[4/5] solve-intensity skipped: empty support");
  }

  write_json(dir / "metrics.json", record);
  say(c.quiet, "[5/5] metrics: JI=" + record["ji"].dump() + " -> " + (dir / "metrics.json").string());
  std::cout << record.dump(2) << '\n';
  return kOk;
}

struct BridgeCheckArgs {
  std::vector<std::string> command;
  std::string tcp;
  int timeout_ms = 10000;
  std::size_t size = 64;
  double sigma = 0.05;
  std::string expect;  // "", "echo" or "scale:<alpha>"
};

int cmd_bridge_check(const BridgeCheckArgs& a) {
  SupportSettings s;
  s.branch = "bridge";
  s.bridge_command = a.command;
  s.bridge_timeout_ms = a.timeout_ms;
  if (!a.tcp.empty()) {
    const auto colon = a.tcp.rfind(':');
    if (colon == std::string::npos) config_error("--tcp expects host:port");
    s.bridge_host = a.tcp.substr(0, colon);
    try {
      s.bridge_port = std::stoi(a.tcp.substr(colon + 1));
    } catch (const std::exception&) {
      config_error("--tcp expects host:port");
    }
  }
  if (s.bridge_command.empty() && s.bridge_host.empty()) config_error("bridge-check needs a server command or --tcp");
  if (a.size == 0) config_error("--size must be positive");

  DenoiserPtr d = make_denoiser(s);
  const int version = fdecon_denoiser_protocol_version(d.get());
  const bool potential = fdecon_denoiser_returns_potential(d.get()) != 0;

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> values(a.size * a.size);
  for (auto& v : values) v = static_cast<double>(static_cast<float>(dist(rng)));
  fdecon_image* z_raw = nullptr;
  check(fdecon_image_create(a.size, a.size, values.data(), &z_raw), "image");
  ImagePtr z(z_raw);

  std::size_t w0 = 0, r0 = 0;
  fdecon_denoiser_bridge_bytes(d.get(), &w0, &r0);
  fdecon_image* out_raw = nullptr;
  double pot = 0.0;
  check(fdecon_denoiser_apply(d.get(), z.get(), a.sigma, &out_raw, &pot), "round trip");
  ImagePtr out(out_raw);
  std::size_t w1 = 0, r1 = 0;
  fdecon_denoiser_bridge_bytes(d.get(), &w1, &r1);

  const std::size_t payload = 4 * a.size * a.size;
  const std::size_t want_req = 21 + payload, want_resp = 13 + payload;
  json record = {{"protocol_version", version},
                 {"returns_potential", potential},
                 {"request_bytes", w1 - w0},
                 {"response_bytes", r1 - r0},
                 {"expected_request_bytes", want_req},
                 {"expected_response_bytes", want_resp},
                 {"potential", number(pot)}};
  bool ok = (w1 - w0) == want_req && (r1 - r0) == want_resp;

  if (!a.expect.empty()) {
    double alpha = 0.0;
    if (a.expect.rfind("scale:", 0) == 0) {
      alpha = std::stod(a.expect.substr(6));
    } else if (a.expect != "echo") {
      config_error("--expect must be echo or scale:<alpha>");
    }
    const double* got = fdecon_image_data(out.get());
    double worst = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double want = static_cast<double>(static_cast<float>((1.0 - alpha) * values[i]));
      worst = std::max(worst, std::abs(got[i] - want));
    }
    record["max_abs_deviation"] = worst;
    ok = ok && worst == 0.0;
  }
  record["ok"] = ok;
  std::cout << record.dump(2) << '\n';
  return ok ? kOk : kBridge;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fluctuation-based deconvolution toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(fdecon_version()));

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--manifest", common.manifest, "JSON experiment manifest");
    sub->add_option("--out-dir", common.out_dir, "output directory (overrides the manifest)");
    sub->add_flag("-q,--quiet", common.quiet, "suppress progress messages");
  };

  std::optional<std::uint64_t> seed;
  std::optional<double> fwhm, pixel;
  std::string stack_path, cov_path, mean_path, mask_path, branch;
  MetricsArgs metrics;
  BridgeCheckArgs bridge_args;

  auto* simulate = app.add_subcommand("simulate", "render a synthetic acquisition");
  add_common(simulate);
  simulate->add_option("--seed", seed, "override the manifest seed");

  std::string raw_input;
  auto* import_raw = app.add_subcommand("import-raw", "convert raw frames described by the manifest to FLK1");
  add_common(import_raw);
  import_raw->add_option("--input", raw_input, "raw file (default: import.path)");

  auto* covariance = app.add_subcommand("covariance", "temporal mean and auto-covariance of a stack");
  add_common(covariance);
  covariance->add_option("--stack", stack_path, "FLK1 stack")->required();

  auto add_psf = [&](CLI::App* sub) {
    sub->add_option("--fwhm-nm", fwhm, "PSF FWHM (default: manifest)");
    sub->add_option("--pixel-size-nm", pixel, "pixel size (default: manifest)");
  };

  auto* solve_support = app.add_subcommand("solve-support", "estimate the emitter support from a covariance image");
  add_common(solve_support);
  add_psf(solve_support);
  solve_support->add_option("--covariance", cov_path, "FLI1 covariance image")->required();
  solve_support->add_option("--branch", branch, "l1 | l0 | tv | quadratic | bridge (default: manifest)");

  auto* solve_intensity = app.add_subcommand("solve-intensity", "estimate intensities on a support");
  add_common(solve_intensity);
  add_psf(solve_intensity);
  solve_intensity->add_option("--mean", mean_path, "FLI1 mean frame")->required();
  solve_intensity->add_option("--support-mask", mask_path, "support mask (FLI1 or PGM)")->required();

  auto* metrics_cmd = app.add_subcommand("metrics", "Jaccard index and PSNR");
  add_common(metrics_cmd);
  metrics_cmd->add_option("--support-mask", metrics.support_mask, "estimated support (FLI1 or PGM)")->required();
  metrics_cmd->add_option("--emitters", metrics.emitters, "ground-truth emitter list");
  metrics_cmd->add_option("--truth-mask", metrics.truth_mask, "ground-truth support mask");
  metrics_cmd->add_option("--intensity", metrics.intensity, "estimated intensity image");
  metrics_cmd->add_option("--truth-intensity", metrics.truth_intensity, "ground-truth intensity image");
  metrics_cmd->add_option("--mean", metrics.mean, "mean frame, reported as the PSNR baseline");
  metrics_cmd->add_option("--pixel-size-nm", metrics.pixel, "pixel size (default: manifest)");
  metrics_cmd->add_option("--tolerance-nm", metrics.tolerance, "matching tolerance (default: manifest)");
  metrics_cmd->add_option("-o,--output", metrics.output, "write the record here as well");

  auto* pipeline = app.add_subcommand("pipeline", "simulate, estimate support and intensity, evaluate");
  add_common(pipeline);
  pipeline->add_option("--seed", seed, "override the manifest seed");

  auto* bridge_check = app.add_subcommand("bridge-check", "handshake and one round trip with a denoiser server");
  bridge_check->add_option("--tcp", bridge_args.tcp, "connect to host:port instead of spawning");
  bridge_check->add_option("--timeout-ms", bridge_args.timeout_ms, "per-call timeout");
  bridge_check->add_option("--size", bridge_args.size, "test image side length");
  bridge_check->add_option("--sigma", bridge_args.sigma, "noise level sent with the request");
  bridge_check->add_option("--expect", bridge_args.expect, "verify the output: echo or scale:<alpha>");
  bridge_check->add_option("command", bridge_args.command, "server command line (after --)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*simulate) return cmd_simulate(common, seed);
    if (*import_raw) return cmd_import_raw(common, raw_input);
    if (*covariance) return cmd_covariance(common, stack_path);
    if (*solve_support) return cmd_solve_support(common, cov_path, fwhm, pixel, branch);
    if (*solve_intensity) return cmd_solve_intensity(common, mean_path, mask_path, fwhm, pixel);
    if (*metrics_cmd) return cmd_metrics(common, metrics);
    if (*pipeline) return cmd_pipeline(common, seed);
    if (*bridge_check) return cmd_bridge_check(bridge_args);
  } catch (const CliError& e) {
    std::cerr << "fdecon: " << e.message << '\n';
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "fdecon: internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kInternal;
}
