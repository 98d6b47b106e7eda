#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pivae/dataset.hpp"
#include "pivae/graph.hpp"
#include "pivae/rng.hpp"
#include "pivae/tensor.hpp"

namespace pivae {

// Dense layers applied left to right. The feature map and decoder use tanh
// between layers with a linear final layer; the encoder trunk applies tanh
// after every layer (its linear heads live on the model).
struct Mlp {
  std::vector<MatrixXd> weights;  // layer k: in_k x out_k
  std::vector<MatrixXd> biases;   // 1 x out_k
};

// Two-stage function prior. A shared feature map turns a location into F
// features: a bank of RBF units with trainable centres and per-centre
// bandwidths, followed by a small MLP. A function is the dot product of those
// features with a weight vector beta (one F-block per output channel); the
// encoder maps beta to a Gaussian latent and the decoder maps latents back to
// beta vectors.
struct PiVaeModel {
  std::uint32_t version = 1;
  int dim = 1;       // D, location dimension
  int features = 20; // F, feature dimension per channel
  int latent = 10;   // L
  int channels = 1;  // C: 1 value-only, 2 value+integral

  MatrixXd centres;        // M x D
  VectorXd log_bandwidth;  // M
  Mlp phi_net;             // M -> ... -> F

  Mlp encoder_trunk;       // F*C -> ... -> H
  MatrixXd enc_mu_w;       // H x L
  MatrixXd enc_mu_b;       // 1 x L
  MatrixXd enc_sd_w;       // H x L, log-sd head
  MatrixXd enc_sd_b;       // 1 x L

  Mlp decoder;             // L -> ... -> F*C

  // Targets are standardized per channel during training; these undo it.
  VectorXd channel_shift;  // C
  VectorXd channel_scale;  // C

  void validate() const;

  // Feature vector for one location (length F).
  VectorXd phi(const VectorXd& s) const;
  // Eager per-row features: row i is exactly phi(locations.row(i)).
  MatrixXd phi_rows(const MatrixXd& locations) const;

  // Raw per-channel reconstruction beta^T phi(s); beta has length F*C.
  VectorXd reconstruct(const VectorXd& beta, const VectorXd& s) const;
  // Reconstruction mapped back to data units for one channel.
  double function_value(const VectorXd& beta, const VectorXd& s,
                        int channel = 0) const;

  std::pair<VectorXd, VectorXd> encode(const VectorXd& beta) const;
  VectorXd decode(const VectorXd& z) const;
};

struct FeatureMapConfig {
  int centres = 20;
  std::vector<int> hidden = {20, 20};
  int features = 20;
};

struct TrainConfig {
  int latent = 10;
  FeatureMapConfig feature_map;
  std::vector<int> encoder_hidden = {20, 20};
  std::vector<int> decoder_hidden = {20, 20};
  int epochs = 100;
  int batch = 20;  // functions per minibatch
  double learning_rate = 1e-3;
  double kl_weight = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainReport {
  std::vector<double> epoch_losses;  // mean per-function loss each epoch
  MatrixXd beta_bank;                // N x F*C, row per training function
};

struct TrainResult {
  PiVaeModel model;
  TrainReport report;
};

// Eq-style training objective for one batch: per function, squared
// reconstruction error through beta and through decode(encode-sample), plus
// the KL of the encoding to the standard normal. Fresh noise per function.
// Targets are standardized with the model's channel scaling first.
double pivae_loss(const std::vector<FunctionDraw>& batch,
                  const PiVaeModel& model, const MatrixXd& beta_rows, Rng& rng,
                  double kl_weight = 1.0);

// Stage-1 training: jointly optimizes the feature map, encoder, decoder, and
// all per-function beta rows with Adam over function minibatches.
TrainResult train_prior(const PriorDataset& dataset, const TrainConfig& config);

void save_model(const PiVaeModel& model, const std::string& path);
PiVaeModel load_model(const std::string& path);

// ---- training internals, exposed for gradient and equivalence checks ----

// Model skeleton with initialized parameters and data-derived scaling.
PiVaeModel init_prior_model(const PriorDataset& dataset,
                            const TrainConfig& config, Rng& rng);
// Registers every trainable tensor of the model in the store (slot names are
// stable); the beta bank is registered separately by the caller.
void register_model_parameters(ParameterStore& store, const PiVaeModel& model);
// Copies trained values back out of the store into a model of this shape.
PiVaeModel extract_model_parameters(const ParameterStore& store,
                                    const PiVaeModel& shape);

struct LossGraph {
  Graph graph;          // references the store; inputs locs/x/eps
  NodeId loss = -1;     // scalar objective (scaled by 1/batch)
  NodeId locations = -1;  // (sum K) x D
  NodeId targets = -1;    // (sum K) x C, standardized
  NodeId noise = -1;      // B x L reparameterization draws
};

// Batch graph over the store; function_rows picks beta rows, counts gives
// points per function in location order. The loss node is the batch total
// divided by the batch size.
LossGraph build_loss_graph(ParameterStore& store, const PiVaeModel& shape,
                           const std::vector<int>& function_rows,
                           const std::vector<int>& counts, double kl_weight);

}  // namespace pivae
