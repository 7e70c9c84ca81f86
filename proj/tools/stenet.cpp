#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "stenet/commands.hpp"

namespace cli = stenet::cli;

int main(int argc, char** argv) {
  CLI::App app{"Superpixel-token RGB-D saliency network: inference, diagnostics and reference checks"};
  app.require_subcommand(1);

  cli::ForwardArgs fwd;
  std::string dump_dir;
  auto* forward = app.add_subcommand("forward", "Predict a saliency map for an RGB-D pair");
  forward->add_option("--rgb", fwd.rgb, "Binary PPM (P6) colour image")->required();
  forward->add_option("--depth", fwd.depth, "Binary PGM (P5) depth image")->required();
  forward->add_option("--config", fwd.config, "Model configuration file")->required();
  forward->add_option("--out", fwd.out, "Output PGM for the final saliency map")->required();
  forward->add_option("--dump-scales", dump_dir, "Directory for the per-stage maps sm1..sm4.pgm");

  cli::SuperpixelArgs spx;
  std::string assoc_path;
  auto* superpixels = app.add_subcommand("superpixels", "Paint each pixel with its superpixel's mean colour");
  superpixels->add_option("--input", spx.input, "Binary PPM or PGM image")->required();
  superpixels->add_option("--cell", spx.cell, "Grid cell side in pixels")->required();
  superpixels->add_option("--radius", spx.radius, "Candidate window radius in cells")->capture_default_str();
  superpixels->add_option("--iters", spx.iters, "Refinement iterations")->capture_default_str();
  superpixels->add_option("--out", spx.out, "Output image")->required();
  superpixels->add_option("--assoc", assoc_path, "Also write the association matrix here");
  superpixels->add_option("--size", spx.size, "Resize to this square side first (0 keeps the input size)")
      ->capture_default_str();
  superpixels->add_option("--seed", spx.seed, "Embedding seed")->capture_default_str();

  std::string flops_config;
  auto* flops = app.add_subcommand("flops", "Print the flop breakdown of a configuration");
  flops->add_option("--config", flops_config, "Model configuration file")->required();

  std::string module;
  std::uint64_t grad_seed = 1;
  double eps = 1e-5;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check of one module");
  gradcheck->add_option("--module", module, "Module to check")
      ->required()
      ->check(CLI::IsMember(stenet::checks::module_names()));
  gradcheck->add_option("--seed", grad_seed, "Seed for inputs and weights")->capture_default_str();
  gradcheck->add_option("--eps", eps, "Central-difference step")->capture_default_str();

  std::string suite;
  std::size_t trials = 50;
  std::uint64_t oracle_seed = 1;
  auto* oracle = app.add_subcommand("oracle", "Compare modules against brute-force references");
  oracle->add_option("--suite", suite, "Suite to run")->required()->check(CLI::IsMember(stenet::suites::suite_names()));
  oracle->add_option("--trials", trials, "Number of seeded instances")->capture_default_str();
  oracle->add_option("--seed", oracle_seed, "Root seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n";
    const auto* failing = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << failing->help();
    return cli::kBadConfig;
  }

  try {
    if (*forward) {
      if (!dump_dir.empty()) fwd.dump_scales = dump_dir;
      return cli::cmd_forward(fwd, std::cout, std::cerr);
    }
    if (*superpixels) {
      if (!assoc_path.empty()) spx.assoc = assoc_path;
      return cli::cmd_superpixels(spx, std::cout, std::cerr);
    }
    if (*flops) return cli::cmd_flops(flops_config, std::cout, std::cerr);
    if (*gradcheck) return cli::cmd_gradcheck(module, grad_seed, eps, std::cout, std::cerr);
    if (*oracle) return cli::cmd_oracle(suite, trials, oracle_seed, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kBadConfig;
  }
  return cli::kBadConfig;
}
