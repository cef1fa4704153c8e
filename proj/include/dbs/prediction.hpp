#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "dbs/bins.hpp"

namespace dbs {

/// Binned predictive at one query point. Decoupled surrogates fill the
/// latent PMF and the noise variance and derive the observation PMF by
/// convolution; observation-only surrogates fill only the observation PMF.
struct DecoupledPrediction {
  std::shared_ptr<const BinGrid> grid;
  std::optional<BinPMF> latent;
  std::optional<double> noise_var;
  BinPMF observation;
  // Unit-norm feature vector used by the EPIG proxy; may be empty.
  std::vector<double> representation;

  bool decoupled() const noexcept { return latent.has_value(); }

  static DecoupledPrediction from_latent(std::shared_ptr<const BinGrid> grid, BinPMF latent,
                                         double noise_var, std::vector<double> repr = {}) {
    DecoupledPrediction p;
    p.observation = convolve(*grid, latent, noise_var);
    p.grid = std::move(grid);
    p.latent = std::move(latent);
    p.noise_var = noise_var;
    p.representation = std::move(repr);
    return p;
  }

  static DecoupledPrediction observation_only(std::shared_ptr<const BinGrid> grid, BinPMF obs,
                                              std::vector<double> repr = {}) {
    DecoupledPrediction p;
    p.grid = std::move(grid);
    p.observation = std::move(obs);
    p.representation = std::move(repr);
    return p;
  }
};

}  // namespace dbs
