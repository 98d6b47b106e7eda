#include "pivae/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include "pivae/adam.hpp"
#include "pivae/errors.hpp"
#include "mlp_util.hpp"

namespace pivae {

using namespace detail;

void PiVaeModel::validate() const {
  if (dim < 1 || features < 1 || latent < 1 || channels < 1 || channels > 2) {
    throw ShapeError("model: invalid dimensions");
  }
  if (centres.rows() < 1 || centres.cols() != dim) {
    throw ShapeError("model: centres must be M x dim with M >= 1");
  }
  if (log_bandwidth.size() != centres.rows()) {
    throw ShapeError("model: one bandwidth per centre required");
  }
  check_mlp(phi_net, centres.rows(), features, "model.phi_net");
  const Eigen::Index fc = static_cast<Eigen::Index>(features) * channels;
  check_mlp(encoder_trunk, fc, mlp_out(encoder_trunk, fc),
            "model.encoder_trunk");
  const Eigen::Index trunk_out = mlp_out(encoder_trunk, fc);
  if (enc_mu_w.rows() != trunk_out || enc_mu_w.cols() != latent ||
      enc_mu_b.rows() != 1 || enc_mu_b.cols() != latent ||
      enc_sd_w.rows() != trunk_out || enc_sd_w.cols() != latent ||
      enc_sd_b.rows() != 1 || enc_sd_b.cols() != latent) {
    throw ShapeError("model: encoder head shapes inconsistent");
  }
  check_mlp(decoder, latent, fc, "model.decoder");
  if (channel_shift.size() != channels || channel_scale.size() != channels) {
    throw ShapeError("model: channel scaling must have one entry per channel");
  }
  if ((channel_scale.array() <= 0.0).any()) {
    throw ShapeError("model: channel scale must be positive");
  }
}

VectorXd PiVaeModel::phi(const VectorXd& s) const {
  if (s.size() != dim) {
    throw ShapeError("phi: location has dimension " + std::to_string(s.size()) +
                     ", expected " + std::to_string(dim));
  }
  if (!s.allFinite()) throw NumericError("phi: non-finite location");
  MatrixXd r(1, centres.rows());
  for (Eigen::Index m = 0; m < centres.rows(); ++m) {
    const double d2 = (s.transpose() - centres.row(m)).squaredNorm();
    r(0, m) = std::exp(-d2 * std::exp(-2.0 * log_bandwidth(m)));
  }
  return mlp_linear_out(phi_net, std::move(r)).transpose();
}

MatrixXd PiVaeModel::phi_rows(const MatrixXd& locations) const {
  MatrixXd out(locations.rows(), features);
  for (Eigen::Index i = 0; i < locations.rows(); ++i) {
    out.row(i) = phi(locations.row(i).transpose()).transpose();
  }
  return out;
}

VectorXd PiVaeModel::reconstruct(const VectorXd& beta,
                                 const VectorXd& s) const {
  const Eigen::Index fc = static_cast<Eigen::Index>(features) * channels;
  if (beta.size() != fc) {
    throw ShapeError("reconstruct: beta has length " +
                     std::to_string(beta.size()) + ", expected " +
                     std::to_string(fc));
  }
  const VectorXd f = phi(s);
  VectorXd out(channels);
  for (int c = 0; c < channels; ++c) {
    out(c) = beta.segment(static_cast<Eigen::Index>(c) * features, features)
                 .dot(f);
  }
  return out;
}

double PiVaeModel::function_value(const VectorXd& beta, const VectorXd& s,
                                  int channel) const {
  if (channel < 0 || channel >= channels) {
    throw ShapeError("function_value: channel out of range");
  }
  return reconstruct(beta, s)(channel) * channel_scale(channel) +
         channel_shift(channel);
}

std::pair<VectorXd, VectorXd> PiVaeModel::encode(const VectorXd& beta) const {
  const Eigen::Index fc = static_cast<Eigen::Index>(features) * channels;
  if (beta.size() != fc) {
    throw ShapeError("encode: beta has length " + std::to_string(beta.size()) +
                     ", expected " + std::to_string(fc));
  }
  const MatrixXd h = mlp_hidden(encoder_trunk, beta.transpose());
  const VectorXd z_mu = ((h * enc_mu_w).rowwise() + enc_mu_b.row(0))
                            .transpose();
  const VectorXd log_sd = ((h * enc_sd_w).rowwise() + enc_sd_b.row(0))
                              .transpose();
  if (!z_mu.allFinite() || !log_sd.allFinite()) {
    throw NumericError("encode: non-finite output");
  }
  return {z_mu, log_sd.array().exp().matrix()};
}

VectorXd PiVaeModel::decode(const VectorXd& z) const {
  if (z.size() != latent) {
    throw ShapeError("decode: latent has length " + std::to_string(z.size()) +
                     ", expected " + std::to_string(latent));
  }
  if (!z.allFinite()) throw NumericError("decode: non-finite latent");
  const VectorXd beta = mlp_linear_out(decoder, z.transpose()).transpose();
  if (!beta.allFinite()) throw NumericError("decode: non-finite output");
  return beta;
}

void TrainConfig::validate() const {
  if (latent < 1) throw ConfigError("train.latent: must be at least 1");
  if (feature_map.centres < 1) {
    throw ConfigError("train.feature_map.centres: must be at least 1");
  }
  if (feature_map.features < 1) {
    throw ConfigError("train.feature_map.features: must be at least 1");
  }
  for (const int w : feature_map.hidden) {
    if (w < 1) throw ConfigError("train.feature_map.hidden: bad width");
  }
  for (const int w : encoder_hidden) {
    if (w < 1) throw ConfigError("train.encoder_hidden: bad width");
  }
  for (const int w : decoder_hidden) {
    if (w < 1) throw ConfigError("train.decoder_hidden: bad width");
  }
  if (epochs < 1) throw ConfigError("train.epochs: must be at least 1");
  if (batch < 1) throw ConfigError("train.batch: must be at least 1");
  if (!(learning_rate > 0.0)) {
    throw ConfigError("train.learning_rate: must be positive");
  }
  if (kl_weight < 0.0) {
    throw ConfigError("train.kl_weight: must be non-negative");
  }
}

double pivae_loss(const std::vector<FunctionDraw>& batch,
                  const PiVaeModel& model, const MatrixXd& beta_rows, Rng& rng,
                  double kl_weight) {
  if (batch.empty()) throw ShapeError("pivae_loss: empty batch");
  const Eigen::Index fc =
      static_cast<Eigen::Index>(model.features) * model.channels;
  if (beta_rows.rows() != static_cast<Eigen::Index>(batch.size()) ||
      beta_rows.cols() != fc) {
    throw ShapeError("pivae_loss: need one beta row of length " +
                     std::to_string(fc) + " per function");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const FunctionDraw& d = batch[i];
    const bool want_integral = model.channels == 2;
    if (d.has_integral() != want_integral) {
      throw ShapeError("pivae_loss: draw " + std::to_string(d.id) +
                       (want_integral ? " is missing" : " carries") +
                       " the integral channel");
    }
    const VectorXd beta =
        beta_rows.row(static_cast<Eigen::Index>(i)).transpose();
    const auto [z_mu, z_sd] = model.encode(beta);
    VectorXd eps(model.latent);
    for (int l = 0; l < model.latent; ++l) eps(l) = rng.normal();
    const VectorXd beta_hat =
        model.decode(z_mu + z_sd.cwiseProduct(eps));
    const MatrixXd feats = model.phi_rows(d.locations);
    for (int c = 0; c < model.channels; ++c) {
      const VectorXd& raw = (c == 0) ? d.values : d.integral;
      const auto bc = beta.segment(static_cast<Eigen::Index>(c) *
                                       model.features,
                                   model.features);
      const auto bhc = beta_hat.segment(static_cast<Eigen::Index>(c) *
                                            model.features,
                                        model.features);
      for (Eigen::Index k = 0; k < raw.size(); ++k) {
        const double x =
            (raw(k) - model.channel_shift(c)) / model.channel_scale(c);
        const double xe = feats.row(k).dot(bc);
        const double xd = feats.row(k).dot(bhc);
        total += (x - xe) * (x - xe) + (x - xd) * (x - xd);
      }
    }
    total += kl_weight * gaussian_kl(z_mu, z_sd);
  }
  return total;
}

PiVaeModel init_prior_model(const PriorDataset& dataset,
                            const TrainConfig& config, Rng& rng) {
  dataset.validate();
  config.validate();
  PiVaeModel m;
  m.dim = dataset.dim;
  m.features = config.feature_map.features;
  m.latent = config.latent;
  m.channels = dataset.with_integral ? 2 : 1;

  // Location bounding box for centre placement.
  VectorXd lo = dataset.draws[0].locations.colwise().minCoeff().transpose();
  VectorXd hi = dataset.draws[0].locations.colwise().maxCoeff().transpose();
  for (const FunctionDraw& d : dataset.draws) {
    lo = lo.cwiseMin(d.locations.colwise().minCoeff().transpose());
    hi = hi.cwiseMax(d.locations.colwise().maxCoeff().transpose());
  }
  const int M = config.feature_map.centres;
  m.centres.resize(M, m.dim);
  if (m.dim == 1) {
    for (int i = 0; i < M; ++i) {
      m.centres(i, 0) =
          M == 1 ? 0.5 * (lo(0) + hi(0))
                 : lo(0) + (hi(0) - lo(0)) * static_cast<double>(i) / (M - 1);
    }
  } else {
    for (int i = 0; i < M; ++i) {
      for (int j = 0; j < m.dim; ++j) {
        m.centres(i, j) = rng.uniform(lo(j), hi(j));
      }
    }
  }
  // Bandwidths start at the median inter-centre distance.
  std::vector<double> dists;
  for (int i = 0; i < M; ++i) {
    for (int j = i + 1; j < M; ++j) {
      dists.push_back((m.centres.row(i) - m.centres.row(j)).norm());
    }
  }
  double bw = 1.0;
  if (!dists.empty()) {
    std::nth_element(dists.begin(), dists.begin() + dists.size() / 2,
                     dists.end());
    bw = dists[dists.size() / 2];
    if (!(bw > 0.0)) bw = 1.0;
  }
  m.log_bandwidth = VectorXd::Constant(M, std::log(bw));

  m.phi_net = make_mlp(M, config.feature_map.hidden, m.features, rng);
  const Eigen::Index fc =
      static_cast<Eigen::Index>(m.features) * m.channels;
  m.encoder_trunk = make_hidden_stack(fc, config.encoder_hidden, rng);
  const Eigen::Index trunk_out = mlp_out(m.encoder_trunk, fc);
  m.enc_mu_w = glorot(trunk_out, m.latent, rng);
  m.enc_mu_b = MatrixXd::Zero(1, m.latent);
  // Zero log-sd head: encodings start at unit deviation.
  m.enc_sd_w = MatrixXd::Zero(trunk_out, m.latent);
  m.enc_sd_b = MatrixXd::Zero(1, m.latent);
  m.decoder = make_mlp(m.latent, config.decoder_hidden, fc, rng);

  // Per-channel target standardization.
  m.channel_shift = VectorXd::Zero(m.channels);
  m.channel_scale = VectorXd::Ones(m.channels);
  for (int c = 0; c < m.channels; ++c) {
    double sum = 0.0, sum2 = 0.0;
    long n = 0;
    for (const FunctionDraw& d : dataset.draws) {
      const VectorXd& v = (c == 0) ? d.values : d.integral;
      sum += v.sum();
      sum2 += v.squaredNorm();
      n += v.size();
    }
    const double mean = sum / static_cast<double>(n);
    const double var = sum2 / static_cast<double>(n) - mean * mean;
    m.channel_shift(c) = mean;
    m.channel_scale(c) = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  m.validate();
  return m;
}

void register_model_parameters(ParameterStore& store,
                               const PiVaeModel& model) {
  store.add("centres", model.centres);
  store.add("log_bw", model.log_bandwidth);
  register_mlp(store, model.phi_net, "phi");
  register_mlp(store, model.encoder_trunk, "enc");
  store.add("enc.mu.w", model.enc_mu_w);
  store.add("enc.mu.b", model.enc_mu_b);
  store.add("enc.sd.w", model.enc_sd_w);
  store.add("enc.sd.b", model.enc_sd_b);
  register_mlp(store, model.decoder, "dec");
}

PiVaeModel extract_model_parameters(const ParameterStore& store,
                                    const PiVaeModel& shape) {
  PiVaeModel m = shape;
  m.centres = store.value("centres");
  m.log_bandwidth = store.value("log_bw");
  extract_mlp(store, m.phi_net, "phi");
  extract_mlp(store, m.encoder_trunk, "enc");
  m.enc_mu_w = store.value("enc.mu.w");
  m.enc_mu_b = store.value("enc.mu.b");
  m.enc_sd_w = store.value("enc.sd.w");
  m.enc_sd_b = store.value("enc.sd.b");
  extract_mlp(store, m.decoder, "dec");
  m.validate();
  return m;
}

LossGraph build_loss_graph(ParameterStore& store, const PiVaeModel& shape,
                           const std::vector<int>& function_rows,
                           const std::vector<int>& counts, double kl_weight) {
  if (function_rows.empty() || function_rows.size() != counts.size()) {
    throw ShapeError("build_loss_graph: one point count per batch function");
  }
  LossGraph lg;
  lg.graph = Graph(&store);
  Graph& g = lg.graph;
  lg.locations = g.input("locs");
  lg.targets = g.input("x");
  lg.noise = g.input("eps");

  const NodeId rbf = g.rbf_features(lg.locations, g.param("centres"),
                                    g.param("log_bw"));
  const NodeId feats =
      graph_mlp_linear_out(g, rbf, shape.phi_net.weights.size(), "phi");

  const NodeId beta_batch =
      g.gather_rows(g.param("beta"), function_rows);
  const NodeId trunk = graph_mlp_hidden(
      g, beta_batch, shape.encoder_trunk.weights.size(), "enc");
  const NodeId z_mu =
      g.affine(trunk, g.param("enc.mu.w"), g.param("enc.mu.b"));
  const NodeId z_sd =
      g.exp(g.affine(trunk, g.param("enc.sd.w"), g.param("enc.sd.b")));
  const NodeId z = g.add(z_mu, g.mul(z_sd, lg.noise));
  const NodeId beta_hat =
      graph_mlp_linear_out(g, z, shape.decoder.weights.size(), "dec");

  NodeId total = -1;
  for (int c = 0; c < shape.channels; ++c) {
    const int f0 = c * shape.features;
    const int f1 = (c + 1) * shape.features;
    const NodeId bc = g.repeat_rows(g.slice_cols(beta_batch, f0, f1), counts);
    const NodeId bhc = g.repeat_rows(g.slice_cols(beta_hat, f0, f1), counts);
    const NodeId xc = g.slice_cols(lg.targets, c, c + 1);
    const NodeId xe = g.row_sum(g.mul(bc, feats));
    const NodeId xd = g.row_sum(g.mul(bhc, feats));
    const NodeId term =
        g.add(g.squared_error(xc, xe), g.squared_error(xc, xd));
    total = (total < 0) ? term : g.add(total, term);
  }
  const NodeId kl = g.gaussian_kl(z_mu, z_sd);
  lg.loss = g.scale(g.add(total, g.scale(kl, kl_weight)),
                    1.0 / static_cast<double>(function_rows.size()));
  return lg;
}

TrainResult train_prior(const PriorDataset& dataset,
                        const TrainConfig& config) {
  config.validate();
  dataset.validate();
  Rng rng(config.seed);
  PiVaeModel model = init_prior_model(dataset, config, rng);
  const int N = static_cast<int>(dataset.draws.size());
  const Eigen::Index fc =
      static_cast<Eigen::Index>(model.features) * model.channels;

  ParameterStore store;
  register_model_parameters(store, model);
  store.add("beta", MatrixXd::Zero(N, fc));

  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  AdamOptimizer opt(store, adam);

  std::vector<int> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), 0);

  TrainReport report;
  report.epoch_losses.reserve(static_cast<std::size_t>(config.epochs));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_sum = 0.0;
    for (int start = 0, batch_index = 0; start < N;
         start += config.batch, ++batch_index) {
      const int b = std::min(config.batch, N - start);
      std::vector<int> rows(order.begin() + start,
                            order.begin() + start + b);
      std::vector<int> counts(static_cast<std::size_t>(b));
      Eigen::Index total_k = 0;
      for (int i = 0; i < b; ++i) {
        counts[static_cast<std::size_t>(i)] = static_cast<int>(
            dataset.draws[static_cast<std::size_t>(rows[static_cast<
                std::size_t>(i)])].locations.rows());
        total_k += counts[static_cast<std::size_t>(i)];
      }
      MatrixXd locs(total_k, model.dim);
      MatrixXd targets(total_k, model.channels);
      Eigen::Index at = 0;
      for (int i = 0; i < b; ++i) {
        const FunctionDraw& d =
            dataset.draws[static_cast<std::size_t>(rows[static_cast<
                std::size_t>(i)])];
        const Eigen::Index k = d.locations.rows();
        locs.middleRows(at, k) = d.locations;
        targets.col(0).segment(at, k) =
            ((d.values.array() - model.channel_shift(0)) /
             model.channel_scale(0))
                .matrix();
        if (model.channels == 2) {
          targets.col(1).segment(at, k) =
              ((d.integral.array() - model.channel_shift(1)) /
               model.channel_scale(1))
                  .matrix();
        }
        at += k;
      }
      MatrixXd eps(b, model.latent);
      for (Eigen::Index i = 0; i < eps.size(); ++i) {
        eps(i / model.latent, i % model.latent) = rng.normal();
      }

      LossGraph lg =
          build_loss_graph(store, model, rows, counts, config.kl_weight);
      lg.graph.bind(lg.locations, std::move(locs));
      lg.graph.bind(lg.targets, std::move(targets));
      lg.graph.bind(lg.noise, std::move(eps));
      double value = 0.0;
      try {
        value = scalar_value(lg.graph.forward(lg.loss));
        store.zero_grads();
        lg.graph.backward(lg.loss);
        opt.step();
      } catch (const NumericError& e) {
        throw NumericError("train_prior: diverged at epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index) + ": " + e.what());
      }
      epoch_sum += value * b;
    }
    report.epoch_losses.push_back(epoch_sum / N);
  }

  TrainResult result;
  result.model = extract_model_parameters(store, model);
  result.report = std::move(report);
  result.report.beta_bank = store.value("beta");
  return result;
}

// ---------------------------------------------------------------------------
// Model file format: "PIVAE" magic, u32 version, dims, then tensors in
// declared order, each as u32 rows, u32 cols, row-major little-endian f64.

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw IoError(path + ": truncated model file");
  }
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& out, double x) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) {
    b[i] = static_cast<unsigned char>(bits >> (8 * i));
  }
  out.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& in, const std::string& path) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) {
    throw IoError(path + ": truncated model file");
  }
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  }
  return std::bit_cast<double>(bits);
}

void put_tensor(std::ostream& out, const MatrixXd& t) {
  put_u32(out, static_cast<std::uint32_t>(t.rows()));
  put_u32(out, static_cast<std::uint32_t>(t.cols()));
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    for (Eigen::Index j = 0; j < t.cols(); ++j) put_f64(out, t(i, j));
  }
}

MatrixXd get_tensor(std::istream& in, const std::string& path) {
  const std::uint32_t rows = get_u32(in, path);
  const std::uint32_t cols = get_u32(in, path);
  if (rows > (1u << 24) || cols > (1u << 24)) {
    throw IoError(path + ": implausible tensor dimensions");
  }
  MatrixXd t(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i) {
    for (std::uint32_t j = 0; j < cols; ++j) t(i, j) = get_f64(in, path);
  }
  return t;
}

constexpr char kMagic[5] = {'P', 'I', 'V', 'A', 'E'};
constexpr std::uint32_t kFormatVersion = 1;

}  // namespace

void save_model(const PiVaeModel& model, const std::string& path) {
  model.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(kMagic, 5);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(model.dim));
  put_u32(out, static_cast<std::uint32_t>(model.features));
  put_u32(out, static_cast<std::uint32_t>(model.latent));
  put_u32(out, static_cast<std::uint32_t>(model.channels));
  put_u32(out, static_cast<std::uint32_t>(model.phi_net.weights.size()));
  put_u32(out, static_cast<std::uint32_t>(model.encoder_trunk.weights.size()));
  put_u32(out, static_cast<std::uint32_t>(model.decoder.weights.size()));
  put_tensor(out, model.centres);
  put_tensor(out, model.log_bandwidth);
  for (std::size_t k = 0; k < model.phi_net.weights.size(); ++k) {
    put_tensor(out, model.phi_net.weights[k]);
    put_tensor(out, model.phi_net.biases[k]);
  }
  for (std::size_t k = 0; k < model.encoder_trunk.weights.size(); ++k) {
    put_tensor(out, model.encoder_trunk.weights[k]);
    put_tensor(out, model.encoder_trunk.biases[k]);
  }
  put_tensor(out, model.enc_mu_w);
  put_tensor(out, model.enc_mu_b);
  put_tensor(out, model.enc_sd_w);
  put_tensor(out, model.enc_sd_b);
  for (std::size_t k = 0; k < model.decoder.weights.size(); ++k) {
    put_tensor(out, model.decoder.weights[k]);
    put_tensor(out, model.decoder.biases[k]);
  }
  put_tensor(out, model.channel_shift);
  put_tensor(out, model.channel_scale);
  if (!out) throw IoError("write to '" + path + "' failed");
}

PiVaeModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  char magic[5];
  if (!in.read(magic, 5) || !std::equal(magic, magic + 5, kMagic)) {
    throw IoError(path + ": not a model file (bad magic)");
  }
  const std::uint32_t version = get_u32(in, path);
  if (version != kFormatVersion) {
    throw IoError(path + ": unsupported format version " +
                  std::to_string(version));
  }
  PiVaeModel m;
  m.version = version;
  m.dim = static_cast<int>(get_u32(in, path));
  m.features = static_cast<int>(get_u32(in, path));
  m.latent = static_cast<int>(get_u32(in, path));
  m.channels = static_cast<int>(get_u32(in, path));
  const std::uint32_t n_phi = get_u32(in, path);
  const std::uint32_t n_trunk = get_u32(in, path);
  const std::uint32_t n_dec = get_u32(in, path);
  if (n_phi > 64 || n_trunk > 64 || n_dec > 64) {
    throw IoError(path + ": implausible layer counts");
  }
  m.centres = get_tensor(in, path);
  m.log_bandwidth = get_tensor(in, path);
  m.phi_net.weights.resize(n_phi);
  m.phi_net.biases.resize(n_phi);
  for (std::uint32_t k = 0; k < n_phi; ++k) {
    m.phi_net.weights[k] = get_tensor(in, path);
    m.phi_net.biases[k] = get_tensor(in, path);
  }
  m.encoder_trunk.weights.resize(n_trunk);
  m.encoder_trunk.biases.resize(n_trunk);
  for (std::uint32_t k = 0; k < n_trunk; ++k) {
    m.encoder_trunk.weights[k] = get_tensor(in, path);
    m.encoder_trunk.biases[k] = get_tensor(in, path);
  }
  m.enc_mu_w = get_tensor(in, path);
  m.enc_mu_b = get_tensor(in, path);
  m.enc_sd_w = get_tensor(in, path);
  m.enc_sd_b = get_tensor(in, path);
  m.decoder.weights.resize(n_dec);
  m.decoder.biases.resize(n_dec);
  for (std::uint32_t k = 0; k < n_dec; ++k) {
    m.decoder.weights[k] = get_tensor(in, path);
    m.decoder.biases[k] = get_tensor(in, path);
  }
  m.channel_shift = get_tensor(in, path);
  m.channel_scale = get_tensor(in, path);
  try {
    m.validate();
  } catch (const Error& e) {
    throw IoError(path + ": corrupt model: " + e.what());
  }
  return m;
}

}  // namespace pivae
