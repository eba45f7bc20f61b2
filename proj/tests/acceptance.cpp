#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "gradcheck.hpp"
#include "unirit/checkpoint.hpp"
#include "unirit/cli.hpp"
#include "unirit/gmm.hpp"
#include "unirit/metrics.hpp"
#include "unirit/model.hpp"
#include "unirit/report.hpp"
#include "unirit/synth.hpp"
#include "unirit/trainer.hpp"

using namespace unirit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1. gradient integrity

template <typename Loss>
double max_fd_error(std::vector<nn::Tensor2D<double>*> params, std::vector<nn::Tensor2D<double>*> grads, double h,
                    double floor, Loss loss) {
  std::mt19937_64 rng(1);
  return gradcheck::check_tensors(params, grads, 1.0, 1, h, 0.0, floor, loss, rng).max_rel_error;
}

nn::Tensor2D<double> gaussian_tensor(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  nn::Tensor2D<double> t(r, c);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = n(rng);
  return t;
}

template <typename Scalar>
void randomize_output_layers(UniRiTModel<Scalar>& model, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto* s : model.mutable_stacks()) {
    auto& last = s->layers().back();
    for (Eigen::Index i = 0; i < last.weight.size(); ++i) last.weight.data()[i] = static_cast<Scalar>(u(rng));
    for (Eigen::Index i = 0; i < last.bias.size(); ++i) last.bias.data()[i] = static_cast<Scalar>(u(rng));
  }
}

Outcome criterion_gradients() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream d;

  // dense stacks, every activation
  for (auto act : {nn::Activation::relu, nn::Activation::leaky_relu, nn::Activation::tanh, nn::Activation::none}) {
    nn::MlpStack<double> s({4, 9, 3}, {act, nn::Activation::none}, 2);
    auto x = gaussian_tensor(6, 4, 3);
    const auto up = gaussian_tensor(6, 3, 4);
    nn::ForwardCache<double> cache;
    s.forward(x, &cache);
    auto g = s.zero_gradients();
    auto gx = s.backward(cache, up, g);
    std::vector<nn::Tensor2D<double>*> p, gr;
    s.collect_parameters(p);
    nn::collect_gradients(g, gr);
    p.push_back(&x);
    gr.push_back(&gx);
    const double e = max_fd_error(p, gr, 1e-6, 1e-8, [&] { return (s.forward(x).array() * up.array()).sum(); });
    o.require(e <= 1e-6, "dense " + nn::to_string(act) + " rel " + fmt("%.2e", e));
  }
  // broadcast input
  {
    nn::MlpStack<double> s({2 + 4 + 3, 5, 2}, {nn::Activation::leaky_relu, nn::Activation::none}, 5);
    typename nn::MlpStack<double>::BroadcastInput in{gaussian_tensor(5, 2, 6), gaussian_tensor(1, 4, 7),
                                                      gaussian_tensor(5, 3, 8)};
    const auto up = gaussian_tensor(5, 2, 9);
    nn::ForwardCache<double> cache;
    s.forward_broadcast(in, &cache);
    auto g = s.zero_gradients();
    auto b = s.backward_broadcast(cache, in, up, g);
    nn::Tensor2D<double> shared = in.shared, gshared = b.shared;
    std::vector<nn::Tensor2D<double>*> p{&in.left, &shared, &in.right}, gr{&b.left, &gshared, &b.right};
    const double e = max_fd_error(p, gr, 1e-6, 1e-8, [&] {
      auto copy = in;
      copy.shared = shared;
      return (s.forward_broadcast(copy).array() * up.array()).sum();
    });
    o.require(e <= 1e-6, "broadcast rel " + fmt("%.2e", e));
  }
  // pooling
  for (auto kind : {nn::Pooling::max, nn::Pooling::mean}) {
    auto f = gaussian_tensor(8, 5, 10);
    const nn::RowVector<double> w = gaussian_tensor(1, 5, 11);
    auto g = nn::pool_backward<double>(nn::pool<double>(f, kind), w);
    const double e =
        max_fd_error({&f}, {&g}, 1e-6, 1e-8, [&] { return nn::pool<double>(f, kind).value.dot(w); });
    o.require(e <= 1e-6, "pool " + nn::to_string(kind) + " rel " + fmt("%.2e", e));
  }
  // rotation parameterizations
  {
    const Eigen::Matrix3d up = gaussian_tensor(3, 3, 12);
    nn::Tensor2D<double> r6 = 0.5 * gaussian_tensor(6, 1, 13);
    nn::Tensor2D<double> g6 = rotation_from_6d_backward<double>(Eigen::Matrix<double, 6, 1>(r6), up);
    double e = max_fd_error({&r6}, {&g6}, 1e-6, 1e-8, [&] {
      return (rotation_from_6d<double>(Eigen::Matrix<double, 6, 1>(r6)).array() * up.array()).sum();
    });
    o.require(e <= 1e-6, "6d rotation rel " + fmt("%.2e", e));
    nn::Tensor2D<double> r3 = 0.7 * gaussian_tensor(3, 1, 14);
    nn::Tensor2D<double> g3 = rotation_from_axis_angle_backward<double>(Eigen::Vector3d(r3), up);
    e = max_fd_error({&r3}, {&g3}, 1e-6, 1e-8, [&] {
      return (rotation_from_axis_angle<double>(Eigen::Vector3d(r3)).array() * up.array()).sum();
    });
    o.require(e <= 1e-6, "axis-angle rotation rel " + fmt("%.2e", e));
  }
  // nearest-neighbour loss
  {
    Points3d a = gaussian_tensor(16, 3, 15);
    const Points3d t = gaussian_tensor(16, 3, 16);
    Points3d g;
    directed_nn_loss<double>(a, t, &g);
    nn::Tensor2D<double> at = a, gt = g;
    const double e = max_fd_error({&at}, {&gt}, 1e-6, 1e-8, [&] { return directed_nn_loss<double>(Points3d(at), t); });
    o.require(e <= 1e-6, "nn loss rel " + fmt("%.2e", e));
  }

  // full model on a 32-point pair
  UniRiTConfig c;
  c.points_per_cloud = 32;
  c.seed = 3;
  std::mt19937_64 rng(1);
  const Points3d src = sample_shape(ShapeFamily::blob, 32, 1.0, rng);
  Points3d tgt = sample_shape(ShapeFamily::blob, 32, 1.0, rng);
  tgt.col(0).array() += 0.1;
  {
    UniRiTModel<double> model(c);
    randomize_output_layers(model, 17, 0.05);
    auto pass = model.forward(src, tgt);
    auto grads = model.zero_gradients();
    loss_and_gradients(model, pass, grads);
    auto loss = [&] { return evaluate_loss(model, src, tgt).total; };
    std::mt19937_64 pick(5);
    const auto res = gradcheck::check_tensors(model.parameters(), grads.tensors(), 0.01, 2, 1e-6, 1e-6,
                                              1e-3 * std::max(1.0, loss()), loss, pick);
    d << "model double " << res.checked << " entries max rel " << fmt("%.1e", res.max_rel_error);
    o.require(res.failures == 0, "full model double: " + std::to_string(res.failures) + " entries above 1e-6");
  }
  {
    UniRiTModel<float> model(c);
    randomize_output_layers(model, 18, 0.05);
    const Points3f sf = src.cast<float>(), tf = tgt.cast<float>();
    auto pass = model.forward(sf, tf);
    auto grads = model.zero_gradients();
    loss_and_gradients(model, pass, grads);
    UniRiTModel<double> md = model.cast<double>();
    const Points3d sd = sf.cast<double>(), td = tf.cast<double>();
    std::vector<nn::Tensor2D<double>> analytic;
    for (auto* g : grads.tensors()) analytic.push_back(g->cast<double>());
    std::vector<nn::Tensor2D<double>*> gt;
    for (auto& a : analytic) gt.push_back(&a);
    auto loss = [&] { return evaluate_loss(md, sd, td).total; };
    std::mt19937_64 pick(6);
    const auto res =
        gradcheck::check_tensors(md.parameters(), gt, 0.01, 2, 1e-6, 1e-3, 1e-2 * std::max(1.0, loss()), loss, pick);
    d << ", single " << res.checked << " entries max rel " << fmt("%.1e", res.max_rel_error);
    o.require(res.failures == 0, "full model single: " + std::to_string(res.failures) + " entries above 1e-3");
  }
  const double secs = seconds_since(t0);
  d << ", " << fmt("%.1f", secs) << " s";
  o.require(secs < 60.0, "runtime " + fmt("%.1f", secs) + " s exceeds 1 min");
  if (o.pass) o.detail = d.str();
  return o;
}

// ---------------------------------------------------------------------------
// 2. identity suite

Outcome criterion_identity() {
  Outcome o;
  PairSpec spec;
  spec.family = ShapeFamily::blob;
  spec.n_points = 256;
  spec.deform_mm = 0.0;
  spec.seed = 5;
  const auto pair = make_registration_pair(spec);
  o.require(pair.source == pair.target, "zero warp changed the source");

  UniRiTConfig c;
  c.points_per_cloud = 256;
  const UniRiTModel<float> model(c);
  const auto r = register_pair(model, prepare_synthetic(pair, 256, 0));
  o.require(r.report.pre_rmse && *r.report.pre_rmse == 0.0, "pre-RMSE not 0");
  o.require(r.report.rmse && *r.report.rmse == 0.0, "post-RMSE " + fmt("%.3g", r.report.rmse.value_or(-1)) + " not 0");
  o.require(r.report.cd == 0.0, "CD not 0");
  o.require(loss_global(pair.source, pair.target) == 0.0, "L_gl not 0");
  o.require(loss_rigid(pair.source, pair.target) == 0.0, "L_rd not 0");
  o.require(chamfer(pair.source, pair.target) == 0.0, "CD not 0");

  spec.deform_mm = 15.0;
  const auto warped = register_pair(model, prepare_synthetic(make_registration_pair(spec), 256, 0));
  o.require(warped.report.rmse == warped.report.pre_rmse, "identity model changed RMSE on a warped pair");
  if (o.pass) o.detail = "pre = post = 0, L_gl = L_rd = CD = 0; identity model leaves warped RMSE unchanged";
  return o;
}

// ---------------------------------------------------------------------------
// 3. GMM suite

Outcome criterion_gmm() {
  Outcome o;
  std::ostringstream d;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    std::mt19937_64 rng(seed);
    const PointCloud cloud(sample_shape(ShapeFamily::blob, 800, 100.0, rng));
    const auto res = fit_em_traced(cloud, 16, seed);
    for (std::size_t i = 1; i < res.log_likelihood.size(); ++i)
      if (res.log_likelihood[i] < res.log_likelihood[i - 1] - 1e-9 * std::abs(res.log_likelihood[i - 1]))
        o.require(false, "EM log-likelihood decreased at iteration " + std::to_string(i));
    if (seed == 1) d << "EM monotone over " << res.log_likelihood.size() << " iterations";
  }

  std::mt19937_64 rng(7);
  const auto g = fit_em(PointCloud(sample_shape(ShapeFamily::ellipsoid, 600, 10.0, rng)), 8, 7);
  const PointCloud gs(g.sample(2000, rng));
  o.require(mc_divergence(g, g, gs) == 0.0, "mc_divergence(g, g) not 0");

  const double delta = 1.5;
  const GaussianMixture gx(Eigen::VectorXd::Constant(1, 1.0), {Vec3::Zero()}, {Mat3::Identity()});
  const GaussianMixture gy(Eigen::VectorXd::Constant(1, 1.0), {Vec3(delta, 0, 0)}, {Mat3::Identity()});
  std::mt19937_64 krng(2024);
  const PointCloud ks(gx.sample(10000, krng));
  Eigen::VectorXd terms(ks.size());
  for (Eigen::Index i = 0; i < ks.size(); ++i) terms(i) = gx.log_density(ks.point(i)) - gy.log_density(ks.point(i));
  const double se = std::sqrt((terms.array() - terms.mean()).square().sum() / (terms.size() - 1.0) / terms.size());
  const double kl = mc_divergence(gx, gy, ks);
  o.require(std::abs(kl - delta * delta / 2) <= 3 * se, "KL estimate " + fmt("%.4f", kl) + " outside 3 SE");
  d << "; KL " << fmt("%.4f", kl) << " vs " << delta * delta / 2 << " (SE " << fmt("%.4f", se) << ")";

  RigidTransformd xf;
  xf.rotation = axis_angle_rotation(Vec3(1, 2, -0.5).normalized(), 0.8);
  xf.translation = Vec3(3, -1, 2);
  const auto moved = rigid_pushforward(g, xf);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < 200; ++i) {
    const Vec3 x = gs.point(i);
    worst = std::max(worst, std::abs(moved.log_density(xf.rotation * x + xf.translation) - g.log_density(x)));
  }
  o.require(worst <= 1e-10, "pushforward density mismatch " + fmt("%.2e", worst));
  d << "; pushforward max err " << fmt("%.1e", worst);
  if (o.pass) o.detail = d.str();
  return o;
}

// ---------------------------------------------------------------------------
// 4. TPS suite

Outcome criterion_tps() {
  Outcome o;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  auto random_points = [&](int count, double scale) {
    Points3d p(count, 3);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = scale * n(rng);
    return p;
  };
  const Points3d control = random_points(10, 50.0);
  const Points3d probe = random_points(100, 60.0);

  const Points3d offsets = random_points(10, 5.0);
  const double interp = (tps_apply(tps_fit(control, offsets), control) - control - offsets).cwiseAbs().maxCoeff();
  o.require(interp <= 1e-8, "interpolation error " + fmt("%.2e", interp));

  const double zero = (tps_apply(tps_fit(control, Points3d::Zero(10, 3)), probe) - probe).cwiseAbs().maxCoeff();
  o.require(zero <= 1e-8, "zero offsets moved points by " + fmt("%.2e", zero));

  const Eigen::RowVector3d shift(1.5, -2.0, 0.25);
  Points3d constant(10, 3);
  constant.rowwise() = shift;
  Points3d shifted = probe;
  shifted.rowwise() += shift;
  const double trans = (tps_apply(tps_fit(control, constant), probe) - shifted).cwiseAbs().maxCoeff();
  o.require(trans <= 1e-8, "constant offsets error " + fmt("%.2e", trans));

  Eigen::Matrix3d a;
  a << 0.1, 0.02, -0.03, 0.0, -0.05, 0.04, 0.01, 0.0, 0.2;
  Points3d affine = control * a.transpose();
  affine.rowwise() += shift;
  Points3d expected = probe + probe * a.transpose();
  expected.rowwise() += shift;
  const double aff = (tps_apply(tps_fit(control, affine), probe) - expected).cwiseAbs().maxCoeff();
  o.require(aff <= 1e-8, "affine offsets error " + fmt("%.2e", aff));
  if (o.pass)
    o.detail = "interp " + fmt("%.1e", interp) + ", zero " + fmt("%.1e", zero) + ", translation " +
               fmt("%.1e", trans) + ", affine " + fmt("%.1e", aff);
  return o;
}

// ---------------------------------------------------------------------------
// 5/6. desk-scale training

struct Split {
  std::vector<PreparedPair> train;
  std::vector<PreparedPair> held_out;
};

Split synthetic_split(PairCase pair_case, std::uint64_t seed) {
  const ShapeFamily families[] = {ShapeFamily::sphere, ShapeFamily::ellipsoid, ShapeFamily::blob};
  Split s;
  for (int i = 0; i < 200; ++i) {
    PairSpec spec;
    spec.family = families[i % 3];
    spec.n_points = 256;
    spec.deform_mm = 15.0;
    spec.shape_radius = 100.0;
    spec.pair_case = pair_case;
    spec.rotation_range_deg = {-45.0, 45.0};
    spec.translation_range = {-0.2, 0.2};
    spec.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    const auto pair = make_registration_pair(spec, to_string(spec.family) + "_" + std::to_string(i));
    auto prepared = prepare_synthetic(pair, 256, derive_seed(seed, 100000 + static_cast<std::uint64_t>(i)));
    (i % 5 == 4 ? s.held_out : s.train).push_back(std::move(prepared));
  }
  return s;
}

UniRiTModel<float> train_logged(const std::vector<PreparedPair>& pairs, const UniRiTConfig& c, const std::string& tag) {
  TrainHooks hooks;
  const auto t0 = std::chrono::steady_clock::now();
  hooks.on_epoch = [&](const EpochRecord& r, const UniRiTModel<float>&, const nn::AdamState<float>&) {
    if (r.epoch % 25 == 0 || r.epoch == 1)
      std::cout << "  [" << tag << "] epoch " << r.epoch << " loss " << fmt("%.5f", r.total) << " ("
                << fmt("%.0f", seconds_since(t0)) << " s)" << std::endl;
  };
  return train(pairs, c, hooks).model;
}

std::vector<MetricReport> evaluate(const UniRiTModel<float>& model, const std::vector<PreparedPair>& pairs) {
  std::vector<MetricReport> out;
  for (const auto& p : pairs) out.push_back(register_pair(model, p).report);
  return out;
}

UniRiTConfig desk_config(int epochs) {
  UniRiTConfig c;
  c.points_per_cloud = 256;
  c.epochs = epochs;
  c.seed = 0;
  return c;
}

Outcome criterion_case_a(int epochs) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto split = synthetic_split(PairCase::A, 2024);
  const auto model = train_logged(split.train, desk_config(epochs), "case A");
  double pre = 0.0, post = 0.0;
  for (const auto& r : evaluate(model, split.held_out)) {
    pre += *r.pre_rmse;
    post += *r.rmse;
  }
  pre /= static_cast<double>(split.held_out.size());
  post /= static_cast<double>(split.held_out.size());
  const double ratio = post / pre;
  o.require(ratio <= 0.2, "ratio above 0.2");
  o.detail = "held-out mean RMSE " + fmt("%.3f", post) + " vs pre " + fmt("%.3f", pre) + " (ratio " +
             fmt("%.3f", ratio) + ", threshold 0.2), " + std::to_string(epochs) + " epochs, " +
             fmt("%.0f", seconds_since(t0)) + " s";
  return o;
}

Outcome criterion_case_b(int epochs) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto split = synthetic_split(PairCase::B, 4048);
  auto median_rmse = [&](const UniRiTModel<float>& model) {
    std::vector<double> v;
    for (const auto& r : evaluate(model, split.held_out)) v.push_back(*r.rmse);
    return median(v);
  };
  std::vector<double> pre;
  for (const auto& p : split.held_out) pre.push_back(rmse_corresponded(p.source_raw, p.target_raw));
  UniRiTConfig full = desk_config(epochs);
  UniRiTConfig ablated = full;
  ablated.ablate_rigid = true;
  const double m_full = median_rmse(train_logged(split.train, full, "case B full"));
  const double m_abl = median_rmse(train_logged(split.train, ablated, "case B ablated"));
  o.require(m_full <= 0.6 * m_abl, "full model not within 0.6x of ablated");
  o.detail = "median RMSE full " + fmt("%.3f", m_full) + " vs ablated " + fmt("%.3f", m_abl) + " (ratio " +
             fmt("%.3f", m_full / m_abl) + ", threshold 0.6; median pre " + fmt("%.3f", median(pre)) + "), " +
             std::to_string(epochs) + " epochs each, " + fmt("%.0f", seconds_since(t0)) + " s";
  return o;
}

// ---------------------------------------------------------------------------
// 7. divergence ordering

Outcome criterion_divergence() {
  Outcome o;
  std::vector<LabeledCollection> sets{{"sphere", {}}, {"ellipsoid", {}}};
  for (int i = 0; i < 12; ++i) {
    for (auto& set : sets) {
      PairSpec spec;
      spec.family = shape_family_from_string(set.label);
      spec.n_points = 512;
      spec.deform_mm = 15.0;
      spec.seed = derive_seed(77, static_cast<std::uint64_t>(i));
      set.clouds.push_back(make_registration_pair(spec).source);
    }
  }
  DivergenceOptions opt;
  opt.picks = 12;
  opt.repetitions = 4;
  opt.seed = 5;
  opt.threads = cli::thread_count();
  const auto m = divergence_matrix(sets, opt);
  const double within = std::max(m.values(0, 0), m.values(1, 1));
  const double cross = std::min(m.values(0, 1), m.values(1, 0));
  o.require(cross > within, "a cross-family cell does not exceed every within-family cell");
  o.detail = "within sphere " + fmt("%.3f", m.values(0, 0)) + ", within ellipsoid " + fmt("%.3f", m.values(1, 1)) +
             ", cross " + fmt("%.3f", m.values(0, 1)) + "/" + fmt("%.3f", m.values(1, 0));
  return o;
}

// ---------------------------------------------------------------------------
// 8. determinism

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Every regular file except the resolved config, which records the output path.
std::vector<std::string> data_files(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "resolved_config.json")
      out.push_back(fs::relative(e.path(), dir).string());
  std::sort(out.begin(), out.end());
  return out;
}

int cli_run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

Outcome criterion_determinism() {
  Outcome o;
  const fs::path root = fs::temp_directory_path() / "unirit_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  auto p = [&](const std::string& name) { return (root / name).string(); };
  nlohmann::json train_cfg{{"points_per_cloud", 64}, {"epochs", 3}, {"lr", 1e-3}, {"checkpoint_every", 2}};
  std::ofstream(root / "train.json") << train_cfg.dump();

  int files = 0;
  for (const auto* run : {"1", "2"}) {
    const std::string r = run;
    o.require(cli_run({"synth", "--family", "sphere,ellipsoid,blob", "--count", "6", "--points", "128", "--case", "B",
                       "--noise", "0.5", "--seed", "9", "--out", p("synth" + r)}) == 0,
              "synth failed");
    o.require(cli_run({"train", "--config", p("train.json"), "--manifest", p("synth" + r + "/manifest.json"), "--seed",
                       "4", "--out", p("train" + r)}) == 0,
              "train failed");
    o.require(cli_run({"eval", "--checkpoint", p("train" + r + "/checkpoint.json"), "--manifest",
                       p("synth" + r + "/manifest.json"), "--out", p("eval" + r)}) == 0,
              "eval failed");
    o.require(cli_run({"register", "--checkpoint", p("train" + r + "/checkpoint.json"), "--source",
                       p("synth" + r + "/sphere_0000_source.xyz"), "--target", p("synth" + r + "/sphere_0000_target.xyz"),
                       "--out", p("register" + r)}) == 0,
              "register failed");
    o.require(cli_run({"analyze-gmm", "--set", "a=" + p("synth" + r), "--set", "b=" + p("synth" + r + "/manifest.json"),
                       "--components", "4", "--samples", "300", "--picks", "3", "--repetitions", "2", "--out",
                       p("gmm" + r)}) == 0,
              "analyze-gmm failed");
  }
  if (!o.pass) return o;

  for (const auto* stage : {"synth", "train", "eval", "register", "gmm"}) {
    const fs::path a = root / (std::string(stage) + "1"), b = root / (std::string(stage) + "2");
    const auto fa = data_files(a), fb = data_files(b);
    o.require(fa == fb, std::string(stage) + ": different file sets");
    for (const auto& f : fa) {
      ++files;
      o.require(slurp(a / f) == slurp(b / f), std::string(stage) + ": " + f + " differs");
    }
  }
  const auto h1 = read_json(root / "train1" / "loss_history.json")["epochs"];
  const auto h2 = read_json(root / "train2" / "loss_history.json")["epochs"];
  double worst = 0.0;
  for (std::size_t e = 0; e < h1.size(); ++e)
    worst = std::max(worst, std::abs(h1[e]["total"].get<double>() - h2[e]["total"].get<double>()));
  o.require(h1.size() == 3 && worst <= 1e-6, "loss histories differ by " + fmt("%.2e", worst));
  if (o.pass)
    o.detail = std::to_string(files) + " data files byte-identical across reruns; loss history max diff " +
               fmt("%.1e", worst);
  fs::remove_all(root);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks; prints one PASS/FAIL line per criterion"};
  std::vector<int> only, expect_fail;
  int epochs = 300;
  app.add_option("--only", only, "run only these criteria (1-8)");
  app.add_option("--expect-fail", expect_fail, "criteria with a documented known failure; they do not fail the run");
  app.add_option("--epochs", epochs, "training epochs for criteria 5 and 6");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient integrity", criterion_gradients},
      {"identity suite", criterion_identity},
      {"GMM suite", criterion_gmm},
      {"TPS suite", criterion_tps},
      {"Case A registration", [&] { return criterion_case_a(epochs); }},
      {"Case B ablation", [&] { return criterion_case_b(epochs); }},
      {"divergence ordering", criterion_divergence},
      {"determinism", criterion_determinism},
  };

  int unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const bool expected = std::find(expect_fail.begin(), expect_fail.end(), id) != expect_fail.end();
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << o.detail
              << (!o.pass && expected ? " [known failure]" : "") << std::endl;
    if (!o.pass && !expected) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}
