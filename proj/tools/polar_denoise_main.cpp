// polar-denoise: experiment runner.
//
// Exit codes: 0 success, 1 usage error, 2 failed internal assertion.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "polar_denoise/polar_denoise.hpp"

namespace pd = polar_denoise;
namespace ex = polar_denoise::experiment;

namespace {

constexpr int kUsageError = 1;
constexpr int kAssertionFailed = 2;

unsigned default_jobs() {
  const char* env = std::getenv("POLAR_DENOISE_JOBS");
  if (!env || !*env) return 1;
  const std::string s(env);
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used == s.size() && v >= 1 && v <= 4096) return static_cast<unsigned>(v);
  } catch (const std::exception&) {
  }
  throw ex::SpecError("POLAR_DENOISE_JOBS must be a positive integer, got '" + s + "'");
}

int audit_specfun() {
  const auto rows = pd::audit::run_specfun_audit();
  ex::CsvTable table({"check", "nu", "z", "value", "reference", "scaled_error", "tolerance", "passed"});
  std::size_t failures = 0;
  for (const auto& r : rows) {
    table.add(r.check, r.order, r.argument, r.value, r.reference, r.error, r.tolerance, r.passed);
    failures += !r.passed;
  }
  std::cout << table.str();
  std::cerr << rows.size() - failures << "/" << rows.size() << " specfun checks passed\n";
  return failures == 0 ? 0 : kAssertionFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Denoising by time-reversed killed Brownian motion: experiment runner", "polar-denoise"};
  app.require_subcommand(1);

  std::string spec_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> jobs;
  auto* run = app.add_subcommand("run", "Run an experiment spec file");
  run->add_option("spec-file", spec_path, "Experiment spec (key = value sections)")->required();
  run->add_option("--out", out_dir, "Output root; artifacts go to <out>/<name>/");
  run->add_option("--seed", seed, "Override the spec's seed");
  run->add_option("--jobs", jobs, "Worker threads (default: $POLAR_DENOISE_JOBS or 1)")->check(CLI::PositiveNumber);

  auto* audit = app.add_subcommand("audit-specfun", "Check the Bessel evaluator against closed forms and references");
  auto* version = app.add_subcommand("version", "Print the library version");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  if (version->parsed()) {
    std::cout << "polar-denoise " << pd::kVersion << "\n";
    return 0;
  }
  if (audit->parsed()) return audit_specfun();

  try {
    ex::RunOptions options;
    options.out_root = out_dir;
    options.seed = seed;
    options.jobs = jobs ? *jobs : default_jobs();
    const auto spec = ex::load_spec(spec_path);
    const auto result = ex::run(spec, options);
    std::cout << "wrote " << result.artifacts.size() << " artifacts to " << result.directory.string() << "\n";
    for (const auto& c : result.checks) {
      std::cout << "  " << c.name << " = " << pd::io::format_double(c.value) << " (" << c.relation << " "
                << pd::io::format_double(c.limit) << ")\n";
    }
    return 0;
  } catch (const ex::AssertionFailure& e) {
    std::cerr << "assertion failed: " << e.what() << "\n";
    return kAssertionFailed;
  } catch (const ex::SpecError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const pd::InvalidParameter& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const pd::FormatError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const pd::DimensionMismatch& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "assertion failed: " << e.what() << "\n";
    return kAssertionFailed;
  }
}
