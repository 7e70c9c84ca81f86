#pragma once

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>

#include "stenet/io/association.hpp"
#include "stenet/io/config.hpp"
#include "stenet/io/netpbm.hpp"
#include "stenet/io/resize.hpp"
#include "stenet/module_checks.hpp"
#include "stenet/oracle_suites.hpp"

// Command bodies behind the stenet executable. Each returns a process exit
// code and writes diagnostics to `err`.

namespace stenet::cli {

enum ExitCode : int {
  kOk = 0,
  kBadImage = 1,
  kBadConfig = 2,
  kCellMismatch = 3,
  kCheckFailed = 4,
};

struct ForwardArgs {
  std::filesystem::path rgb, depth, config, out;
  std::optional<std::filesystem::path> dump_scales;
};

struct SuperpixelArgs {
  std::filesystem::path input, out;
  std::size_t cell = 4;
  std::size_t radius = 2;
  std::size_t iters = 2;
  std::optional<std::filesystem::path> assoc;
  std::size_t size = 0;  // 0 keeps the input size
  std::uint64_t seed = 1;
};

/// RGB [3, S, S] and depth [1, S, S] in [0, 1], both resized to S.
struct ImagePair {
  Tensor rgb;
  Tensor depth;
};

inline ImagePair load_pair(const std::filesystem::path& rgb_path, const std::filesystem::path& depth_path,
                           std::size_t size) {
  const auto rgb = io::read_netpbm(rgb_path);
  if (rgb.channels != 3) throw io::ImageFormatError(rgb_path.string() + ": expected a P6 colour image");
  const auto depth = io::read_netpbm(depth_path);
  if (depth.channels != 1) throw io::ImageFormatError(depth_path.string() + ": expected a P5 grey image");
  return {io::resize_bilinear(io::image_to_tensor(rgb), size, size),
          io::resize_bilinear(io::image_to_tensor(depth), size, size)};
}

inline int cmd_forward(const ForwardArgs& args, std::ostream& out, std::ostream& err) {
  network::ModelConfig cfg;
  try {
    cfg = io::load_config(args.config);
  } catch (const io::ConfigError& e) {
    err << "config: " << e.what() << "\n";
    return kBadConfig;
  }
  ImagePair pair;
  try {
    pair = load_pair(args.rgb, args.depth, cfg.input_size);
  } catch (const io::ImageFormatError& e) {
    err << "image: " << e.what() << "\n";
    return kBadImage;
  }
  const auto params = network::NetworkParams::init(cfg);
  SaliencyOutput sal;
  {
    NoGradGuard no_grad;
    sal = network::forward(pair.rgb, pair.depth, params, cfg);
  }
  try {
    if (args.dump_scales) {
      std::filesystem::create_directories(*args.dump_scales);
      for (std::size_t i = 1; i <= network::kStages; ++i) {
        io::write_netpbm(*args.dump_scales / ("sm" + std::to_string(i) + ".pgm"), io::tensor_to_image(sal.stage(i)));
      }
    }
    io::write_netpbm(args.out, io::tensor_to_image(sal.final_map()));
  } catch (const std::exception& e) {
    err << "output: " << e.what() << "\n";
    return kBadImage;
  }
  out << "wrote " << args.out.string() << " (" << cfg.input_size << "x" << cfg.input_size << ")\n";
  return kOk;
}

/// Each pixel takes the mean colour of all pixels sharing its argmax
/// superpixel.
inline Tensor paint_superpixels(const Tensor& image, const std::vector<std::size_t>& labels, std::size_t M) {
  const std::size_t C = image.size(0), HW = image.size(1) * image.size(2);
  std::vector<double> sums(M * C, 0.0), counts(M, 0.0), out(C * HW);
  auto d = image.data();
  for (std::size_t i = 0; i < HW; ++i) {
    counts[labels[i]] += 1.0;
    for (std::size_t c = 0; c < C; ++c) sums[labels[i] * C + c] += d[c * HW + i];
  }
  for (std::size_t i = 0; i < HW; ++i) {
    for (std::size_t c = 0; c < C; ++c) out[c * HW + i] = sums[labels[i] * C + c] / counts[labels[i]];
  }
  return Tensor(image.shape(), std::move(out));
}

/// Pixel colours with the image mean removed, as [HW, C] features.
inline Tensor centered_colour_features(const Tensor& image) {
  const std::size_t C = image.size(0), HW = image.size(1) * image.size(2);
  auto d = image.data();
  std::vector<double> f(HW * C);
  for (std::size_t c = 0; c < C; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < HW; ++i) mean += d[c * HW + i];
    mean /= static_cast<double>(HW);
    for (std::size_t i = 0; i < HW; ++i) f[i * C + c] = d[c * HW + i] - mean;
  }
  return Tensor({HW, C}, std::move(f));
}

inline int cmd_superpixels(const SuperpixelArgs& args, std::ostream& out, std::ostream& err) {
  if (args.radius < 1 || args.radius > 3) {
    err << "radius must be 1, 2 or 3\n";
    return kBadConfig;
  }
  Tensor image;
  try {
    image = io::image_to_tensor(io::read_netpbm(args.input));
  } catch (const io::ImageFormatError& e) {
    err << "image: " << e.what() << "\n";
    return kBadImage;
  }
  if (args.size != 0) image = io::resize_bilinear(image, args.size, args.size);
  const std::size_t H = image.size(1), W = image.size(2);
  if (args.cell == 0 || H % args.cell != 0 || W % args.cell != 0) {
    err << "cell " << args.cell << " does not divide the " << H << "x" << W << " image\n";
    return kCellMismatch;
  }
  const auto geo = superpixel::GridGeometry::make(H, W, args.cell);
  const superpixel::NeighborhoodSpec spec{args.radius, 9, 0};
  Rng rng(args.seed);
  const auto params = superpixel::Params::init(image.size(0), rng);
  superpixel::State state;
  {
    NoGradGuard no_grad;
    state = superpixel::generate(centered_colour_features(image), geo, spec, params, args.iters);
  }
  const auto painted = paint_superpixels(image, superpixel::argmax_labels(state), geo.M());
  try {
    if (args.assoc) io::write_association(*args.assoc, io::AssociationDump::from_tensor(state.A));
    io::write_netpbm(args.out, io::tensor_to_image(painted));
  } catch (const std::exception& e) {
    err << "output: " << e.what() << "\n";
    return kBadImage;
  }
  out << "wrote " << args.out.string() << " (" << geo.M() << " superpixels)\n";
  return kOk;
}

inline void print_flop_report(const network::ModelConfig& cfg, std::ostream& out) {
  const auto report = network::count_flops(cfg);
  auto row = [&](const std::string& a, const std::string& b, const std::string& c, const std::string& d,
                 const std::string& e, const std::string& f, const std::string& g, const std::string& h,
                 const std::string& i, const std::string& j, const std::string& k) {
    out << std::left << std::setw(6) << a << std::right << std::setw(6) << b << std::setw(6) << c << std::setw(7) << d
        << std::setw(14) << e << std::setw(14) << f << std::setw(14) << g << std::setw(14) << h << std::setw(14) << i
        << std::setw(16) << j << std::setw(12) << k << "\n";
  };
  row("stage", "side", "cell", "M", "encoder", "sagem", "salrm", "fusion", "decoder", "sagem_dense", "dense/sp");
  for (std::size_t i = 0; i < network::kStages; ++i) {
    const auto& s = report.stages[i];
    const auto geo = cfg.geometry(i);
    std::ostringstream ratio;
    ratio << std::fixed << std::setprecision(4)
          << static_cast<double>(s.sagem.dense_attention()) / static_cast<double>(s.sagem.attention());
    row(std::to_string(i + 1), std::to_string(cfg.side(i)), std::to_string(cfg.cells[i]), std::to_string(geo.M()),
        std::to_string(s.encoder.total()), std::to_string(s.sagem.total()), std::to_string(s.salrm.total()),
        std::to_string(s.fusion.total()), std::to_string(s.decoder.total()),
        std::to_string(s.sagem.total() - s.sagem.attention() + s.sagem.dense_attention()), ratio.str());
  }
  out << "total flops:             " << report.total() << "\n";
  out << "dense-attention total:   " << report.dense_total() << "\n";
  out << "dense / total:           " << std::fixed << std::setprecision(4)
      << static_cast<double>(report.dense_total()) / static_cast<double>(report.total()) << "\n";
  out.unsetf(std::ios::floatfield);
}

inline int cmd_flops(const std::filesystem::path& config, std::ostream& out, std::ostream& err) {
  network::ModelConfig cfg;
  try {
    cfg = io::load_config(config);
  } catch (const io::ConfigError& e) {
    err << "config: " << e.what() << "\n";
    return kBadConfig;
  }
  print_flop_report(cfg, out);
  return kOk;
}

inline int cmd_gradcheck(const std::string& module, std::uint64_t seed, double eps, std::ostream& out,
                         std::ostream& err) {
  GradCheckReport r;
  try {
    r = checks::check_module(module, seed, eps);
  } catch (const std::invalid_argument& e) {
    err << e.what() << "\n";
    return kBadConfig;
  }
  const double threshold = checks::module_threshold(module);
  out << module << ": " << r.coords << " coordinates (" << r.skipped << " skipped at selection boundaries), "
      << "worst relative error " << std::scientific << std::setprecision(3) << r.worst_rel_err << " at "
      << r.worst_param << "[" << r.worst_index << "], threshold " << threshold << "\n";
  out.unsetf(std::ios::floatfield);
  if (!r.passed(threshold)) {
    err << module << ": gradient check failed\n";
    return kCheckFailed;
  }
  return kOk;
}

inline int cmd_oracle(const std::string& suite, std::size_t trials, std::uint64_t seed, std::ostream& out,
                      std::ostream& err) {
  suites::SuiteResult r;
  try {
    r = suites::run_suite(suite, trials, seed);
  } catch (const std::invalid_argument& e) {
    err << e.what() << "\n";
    return kBadConfig;
  }
  out << suite << ": " << r.cases << " cases, " << r.failures << " failures, worst deviation " << std::scientific
      << std::setprecision(3) << r.worst << " (tolerance " << r.tolerance << ")\n";
  out.unsetf(std::ios::floatfield);
  if (!r.passed()) {
    err << suite << ": " << r.first_failure << "\n";
    return kCheckFailed;
  }
  return kOk;
}

}  // namespace stenet::cli
