#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "glfc/harness.hpp"

namespace glfc::selftest {

struct CheckResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

namespace detail {

inline std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

inline double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double rel_error(std::span<const double> a, std::span<const double> b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return norm(d) / std::max({norm(a), norm(b), 1e-12});
}

inline std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                              std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double down = f(x);
    x[i] = x0;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double sd = 1.0) {
  Matrix m(r, c);
  for (auto& v : m.data()) v = draw_normal(rng, 0.0, sd);
  return m;
}

inline std::vector<std::size_t> random_labels(Rng& rng, std::size_t n, std::size_t classes) {
  std::uniform_int_distribution<std::size_t> pick(0, classes - 1);
  std::vector<std::size_t> out(n);
  for (auto& l : out) l = pick(rng);
  return out;
}

inline std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Relative error between the analytic parameter gradient of `loss` and a
// central difference of `frozen` (the same loss with any data-dependent
// weights held at their values at the current parameters).
template <LogitLoss L, LogitLoss F>
double param_gradient_error(const ModelInstance& model, const Matrix& x, const L& loss, const F& frozen) {
  const auto g = param_gradient(model, x, loss).grad.values();
  const auto f = [&](std::span<const double> p) {
    ModelInstance m{model.spec, ParameterVector(model.spec.layout(), {p.begin(), p.end()})};
    return loss_value(m, x, frozen);
  };
  return rel_error(g, central_difference(f, model.params.values()));
}

template <class Fn>
CheckResult timed(int id, std::string name, Fn&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r{id, std::move(name), false, {}, 0.0};
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline ModelInstance small_mlp(Rng& rng, std::size_t in, std::size_t hidden, std::size_t out) {
  return init_model(mlp_spec(in, {hidden}, out), rng());
}

}  // namespace detail

// 1. Finite-difference agreement of every loss gradient.
inline CheckResult gradient_oracles(std::size_t trials = 50) {
  return detail::timed(1, "gradient oracles (CE, GC, RD, GP, RT) vs central differences", [&](CheckResult& r) {
    using namespace detail;
    Rng rng = make_rng(101);
    double worst[5] = {0, 0, 0, 0, 0};
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t in = uniform(rng, 3, 6), hid = uniform(rng, 4, 8), c = uniform(rng, 3, 6);
      const std::size_t b = uniform(rng, 2, 6);
      const ModelInstance model = small_mlp(rng, in, hid, c);
      const Matrix x = random_matrix(rng, b, in);
      const auto labels = random_labels(rng, b, c);
      const Matrix y = one_hot(labels, c);

      worst[0] = std::max(worst[0], param_gradient_error(model, x, BceLoss{y, {}}, BceLoss{y, {}}));

      std::vector<bool> is_new(b);
      for (std::size_t i = 0; i < b; ++i) is_new[i] = labels[i] >= c / 2;
      const auto cat = static_cast<ClientCategory>(t % 3);
      GradientCompensationLoss gc{y, labels, is_new, cat, true};
      const auto w = compensation_weights(forward(model, x), labels, is_new, cat);
      worst[1] = std::max(worst[1], param_gradient_error(model, x, gc, BceLoss{y, w}));

      const std::size_t old_c = uniform(rng, 1, c - 1);
      const ModelInstance old = small_mlp(rng, in, hid, old_c);
      const Squash sq = t % 2 == 0 ? Squash::sigmoid : Squash::softmax;
      RelationDistillationLoss rd{rd_target(old, x, y, sq), sq};
      worst[2] = std::max(worst[2], param_gradient_error(model, x, rd, rd));

      const Matrix x1 = random_matrix(rng, 1, in);
      const Matrix off = random_matrix(rng, 1, hid, 0.1);
      const std::size_t lab[] = {labels[0]};
      const BceLoss gp{one_hot(lab, c), {}};
      const auto ig = input_gradient(model, x1, gp, &off).grad.data();
      const auto fgp = [&](std::span<const double> v) {
        Matrix m(1, in);
        std::copy(v.begin(), v.end(), m.data().begin());
        return loss_value(model, m, gp, &off);
      };
      worst[3] = std::max(worst[3], rel_error(ig, central_difference(fgp, x1.data())));

      const ModelInstance enc = init_model(encoder_spec(Shape{in}, c, EncoderArch::mlp, hid), rng());
      const auto truth = draw_normal_vector(rng, in);
      const auto packet = encode_gradient(truth, labels[0], enc);
      const auto probe = draw_normal_vector(rng, in);
      const auto exact = matching_loss_gradient(packet, enc, probe, labels[0]).grad;
      const auto frt = [&](std::span<const double> v) { return matching_loss(packet, enc, v, labels[0]); };
      worst[4] = std::max(worst[4], rel_error(exact, central_difference(frt, probe)));
    }
    const double mx = *std::max_element(std::begin(worst), std::end(worst));
    r.detail = fmt("max rel err CE %.1e GC %.1e RD %.1e GP %.1e RT %.1e over %zu trials each", worst[0], worst[1],
                   worst[2], worst[3], worst[4], trials);
    r.passed = mx < 1e-4;
  });
}

// 2. Reweighting factors average to one on each side; equal |G| gives plain BCE.
inline CheckResult weight_normalization(std::size_t trials = 1000) {
  return detail::timed(2, "gradient compensation weight normalization", [&](CheckResult& r) {
    using namespace detail;
    Rng rng = make_rng(202);
    double worst = 0.0;
    std::size_t exact = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t b = uniform(rng, 2, 16), c = uniform(rng, 2, 8);
      const Matrix z = random_matrix(rng, b, c, 2.0);
      const auto labels = random_labels(rng, b, c);
      std::vector<bool> is_new(b);
      for (std::size_t i = 0; i < b; ++i) is_new[i] = i == 0 || (i != 1 && uniform(rng, 0, 1) == 1);
      const auto w = compensation_weights(z, labels, is_new, ClientCategory::both);
      double sn = 0.0, so = 0.0;
      std::size_t nn = 0, no = 0;
      for (std::size_t i = 0; i < b; ++i) {
        (is_new[i] ? sn : so) += w[i];
        ++(is_new[i] ? nn : no);
      }
      worst = std::max({worst, std::abs(sn / nn - 1.0), std::abs(so / no - 1.0)});

      // Identical rows: every |G| is equal.
      Matrix d(b, c);
      const auto row = draw_normal_vector(rng, c);
      for (std::size_t i = 0; i < b; ++i) std::copy(row.begin(), row.end(), d.row(i).begin());
      const std::vector<std::size_t> same(b, labels[0]);
      const Matrix y = one_hot(same, c);
      const double gc = GradientCompensationLoss{y, same, is_new, ClientCategory::both, true}.evaluate(d).value;
      exact += gc == BceLoss{y, {}}.evaluate(d).value;
    }
    r.detail = fmt("max |side mean - 1| = %.1e over %zu batches; %zu/%zu degenerate batches exact", worst, trials,
                   exact, trials);
    r.passed = worst <= 1e-9 && exact == trials;
  });
}

// 3. Distillation target keeps the old outputs and one-hot block verbatim.
inline CheckResult distillation_target(std::size_t trials = 1000) {
  return detail::timed(3, "relation distillation target and KL sign", [&](CheckResult& r) {
    using namespace detail;
    Rng rng = make_rng(303);
    std::size_t splice_ok = 0, nonneg = 0, zero_ok = 0;
    double min_loss = 1e300, max_zero = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t in = uniform(rng, 2, 6), cp = uniform(rng, 1, 5), ct = uniform(rng, 1, 4);
      const std::size_t b = uniform(rng, 1, 6);
      const ModelInstance old = small_mlp(rng, in, 5, cp);
      const Matrix x = random_matrix(rng, b, in);
      const Matrix y = one_hot(random_labels(rng, b, cp + ct), cp + ct);
      const Matrix old_p = probabilities(forward(old, x), Squash::sigmoid);
      const Matrix spliced = splice_relation_target(old_p, y);
      bool same = true;
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t k = 0; k < cp + ct; ++k) same = same && spliced(i, k) == (k < cp ? old_p(i, k) : y(i, k));
      }
      splice_ok += same;
      const Squash sq = t % 2 == 0 ? Squash::sigmoid : Squash::softmax;
      const Matrix target = rd_target(old, x, y, sq);
      const double l = RelationDistillationLoss{target, sq}.evaluate(random_matrix(rng, b, cp + ct, 3.0)).value;
      min_loss = std::min(min_loss, l);
      nonneg += l >= 0.0;
      // Student prediction equal to the target.
      const Matrix z = random_matrix(rng, b, cp + ct, 3.0);
      const double at_eq = RelationDistillationLoss{normalized_probabilities(z, sq), sq}.evaluate(z).value;
      max_zero = std::max(max_zero, std::abs(at_eq));
      zero_ok += std::abs(at_eq) <= 1e-12;
    }
    r.detail = fmt("splice exact %zu/%zu, L>=0 %zu/%zu (min %.2e), |L| at equality max %.1e", splice_ok, trials,
                   nonneg, trials, min_loss, max_zero);
    r.passed = splice_ok == trials && nonneg == trials && zero_ok == trials;
  });
}

// 4. Entropy-jump detector at the reference threshold of 1.2.
inline CheckResult transition_detector(std::size_t seeds = 100) {
  return detail::timed(4, "task-transition detector", [&](CheckResult& r) {
    using namespace detail;
    constexpr double kThreshold = 1.2;
    bool rule_ok = detect_transition(std::vector<double>{0.4, 1.7}, kThreshold) &&
                   !detect_transition(std::vector<double>{0.4, 1.5}, kThreshold) &&
                   !detect_transition(std::vector<double>{2.0}, kThreshold) &&
                   !detect_transition(std::vector<double>{}, kThreshold);
    Rng grid = make_rng(404);
    for (int i = 0; i < 2000; ++i) {
      const double prev = draw_normal(grid, 1.0, 0.5);
      const double jump = draw_normal(grid, 1.2, 0.6);
      const std::vector<double> h{prev, prev + jump};
      rule_ok = rule_ok && detect_transition(h, kThreshold) == (h[1] - h[0] >= kThreshold);
    }
    // Identity head: logits are the inputs themselves.
    constexpr std::size_t C = 10;
    ModelInstance id = zero_model(ModelSpec(Shape{C}, {LayerSpec::dense(C, C)}));
    for (std::size_t k = 0; k < C; ++k) id.params.block(0)[k * C + k] = 1.0;
    const auto make_round = [&](Rng& rng, bool confused) {
      std::vector<LabeledSample> shard(20);
      for (auto& s : shard) {
        s.label = uniform(rng, 0, C - 1);
        s.features = draw_normal_vector(rng, C, 0.0, 0.3);
        if (!confused) s.features[s.label] += 6.0;
      }
      return shard;
    };
    std::size_t on_time = 0, false_pos = 0;
    for (std::size_t seed = 0; seed < seeds; ++seed) {
      Rng rng = make_rng(4040, {seed});
      const std::size_t boundary = uniform(rng, 3, 8);
      std::vector<double> h, control;
      std::optional<std::size_t> first;
      for (std::size_t round = 1; round <= 10; ++round) {
        h.push_back(average_entropy(id, make_round(rng, round >= boundary)));
        if (!first && detect_transition(h, kThreshold)) first = round;
        control.push_back(average_entropy(id, make_round(rng, false)));
        false_pos += detect_transition(control, kThreshold);
      }
      on_time += first == boundary;
    }
    r.detail = fmt("threshold rule %s; detected at the boundary in %zu/%zu seeds; %zu false positives on control",
                   rule_ok ? "exact" : "WRONG", on_time, seeds, false_pos);
    r.passed = rule_ok && on_time * 100 >= 95 * seeds && false_pos == 0;
  });
}

// 5. Label recovery from the sign of the final bias gradient.
inline CheckResult label_recovery(std::size_t trials = 1000) {
  return detail::timed(5, "label recovery from final-layer gradient sign", [&](CheckResult& r) {
    using namespace detail;
    Rng rng = make_rng(505);
    std::size_t correct = 0;
    double worst = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t d = uniform(rng, 4, 64), c = uniform(rng, 2, 10);
      const ModelInstance enc = init_model(encoder_spec(Shape{d}, c), rng());
      const auto x = draw_normal_vector(rng, d);
      const std::size_t label = uniform(rng, 0, c - 1);
      const auto packet = encode_gradient(x, label, enc);
      Matrix in(1, d);
      std::copy(x.begin(), x.end(), in.data().begin());
      const Matrix p = probabilities(forward(enc, in), Squash::softmax);
      const auto bias = packet.grad.bias(packet.grad.layout().size() - 1);
      for (std::size_t k = 0; k < c; ++k) {
        worst = std::max(worst, std::abs(bias[k] - (p(0, k) - (k == label ? 1.0 : 0.0))));
      }
      correct += recover_label(packet) == label;
    }
    r.detail = fmt("%zu/%zu recovered; max |bias grad - (p - y)| = %.1e", correct, trials, worst);
    r.passed = correct == trials && worst <= 1e-12;
  });
}

// 6. Gradient-matching reconstruction on a one-layer encoder.
inline CheckResult reconstruction(std::size_t seeds = 50) {
  return detail::timed(6, "prototype reconstruction by gradient matching", [&](CheckResult& r) {
    using namespace detail;
    std::size_t ratio_ok = 0, rmse_ok = 0;
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng = make_rng(606, {s});
      const std::size_t c = 10;
      const ModelInstance enc = init_model(ModelSpec(Shape{8}, {LayerSpec::dense(8, c)}), rng());
      const auto x = draw_normal_vector(rng, 8);
      const std::size_t label = uniform(rng, 0, c - 1);
      const auto packet = encode_gradient(x, label, enc);
      const auto rec = reconstruct_sample(packet, enc, recover_label(packet), ReconstructConfig{}, rng());
      double se = 0.0;
      for (std::size_t k = 0; k < 8; ++k) se += (rec.features[k] - x[k]) * (rec.features[k] - x[k]);
      ratio_ok += rec.residual <= 1e-3 * rec.initial_residual;
      rmse_ok += std::sqrt(se / 8.0) <= 1e-2;
    }
    r.detail = fmt("matching loss ratio <= 1e-3 on %zu/%zu seeds; RMSE <= 1e-2 on %zu/%zu", ratio_ok, seeds, rmse_ok, seeds);
    r.passed = ratio_ok * 100 >= 90 * seeds && rmse_ok * 100 >= 80 * seeds;
  });
}

// 7. Memory quota over every (capacity <= 64, old classes <= 16) pair.
inline CheckResult memory_quota() {
  return detail::timed(7, "exemplar memory quota", [&](CheckResult& r) {
    using namespace detail;
    Rng rng = make_rng(707);
    const ModelInstance model = small_mlp(rng, 4, 6, 3);
    std::size_t pairs = 0, ok = 0;
    for (std::size_t cap = 1; cap <= 64; ++cap) {
      for (std::size_t cp = 1; cp <= 16; ++cp) {
        ++pairs;
        std::map<std::size_t, std::size_t> available;
        ExemplarMemory mem;
        mem.capacity = cap;
        std::size_t seen = 0, index = 0;
        bool good = true;
        while (seen < cp) {
          const std::size_t chunk = std::min(cp - seen, uniform(rng, 1, 4));
          std::map<std::size_t, std::vector<LabeledSample>> finished;
          for (std::size_t c = seen; c < seen + chunk; ++c) {
            const std::size_t n = uniform(rng, 1, 12);
            available[c] = n;
            for (std::size_t i = 0; i < n; ++i) {
              finished[c].push_back({draw_normal_vector(rng, 4), c, index++});
            }
          }
          seen += chunk;
          mem = update_memory(std::move(mem), finished, seen, model);
          const std::size_t quota = cap / seen;
          for (const auto& [c, n] : available) {
            const auto it = mem.per_class.find(c);
            const std::size_t have = it == mem.per_class.end() ? 0 : it->second.size();
            good = good && have == std::min(n, quota);
          }
          good = good && mem.total() <= cap;
        }
        ok += good;
      }
    }
    r.detail = fmt("%zu/%zu (capacity, old-class) pairs hold min(available, floor(capacity / old classes)) and total <= capacity", ok,
                   pairs);
    r.passed = ok == pairs;
  });
}

// 8. FedAvg arithmetic and order-invariant rounds.
inline CheckResult federation_algebra(std::size_t rounds = 20) {
  return detail::timed(8, "federation algebra and order invariance", [&](CheckResult& r) {
    using namespace detail;
    Rng rng = make_rng(808);
    const Layout layout{{0, 0, {3, 4}, 3}};
    bool idem = true;
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
      ParameterVector v(layout, draw_normal_vector(rng, 15, 0.0, 10.0));
      std::vector<ParameterVector> copies(uniform(rng, 1, 9), v);
      idem = idem && fedavg_aggregate(copies) == v;
      std::vector<ParameterVector> many;
      for (std::size_t k = 0, n = uniform(rng, 1, 9); k < n; ++k) {
        many.emplace_back(layout, draw_normal_vector(rng, 15, 0.0, 10.0));
      }
      const auto mean = fedavg_aggregate(many);
      for (std::size_t i = 0; i < 15; ++i) {
        long double s = 0.0L;
        for (const auto& m : many) s += m.values()[i];
        const double oracle = static_cast<double>(s / static_cast<long double>(many.size()));
        worst = std::max(worst, std::abs(mean.values()[i] - oracle) / std::max(1.0, std::abs(oracle)));
      }
    }
    std::size_t compared = 0, identical = 0;
    for (std::uint64_t seed = 1; compared < rounds; ++seed) {
      ExperimentConfig cfg = desk_profile();
      cfg.seed = seed;
      Simulation sim(cfg);
      for (std::size_t t = 1; t <= sim.schedule().task_count() && compared < rounds; ++t) {
        sim.begin_task(t);
        for (std::size_t k = 0; k < sim.schedule().rounds[t - 1] && compared < rounds; ++k) {
          const World before = sim.world();
          const RoundOutput a = run_round(before, sim.context());
          auto order = a.metrics.selected;
          std::reverse(order.begin(), order.end());
          Rng prng = make_rng(seed, {t, k});
          std::shuffle(order.begin(), order.end(), prng);
          std::reverse(order.begin(), order.end());
          const RoundOutput b = run_round(before, sim.context(), order);
          bool same = a.world.global.model == b.world.global.model &&
                      a.world.proxy.eval_set == b.world.proxy.eval_set &&
                      a.world.proxy.best == b.world.proxy.best &&
                      a.metrics.transitions == b.metrics.transitions && a.metrics.packets == b.metrics.packets;
          for (const auto& [id, c] : a.world.clients) {
            const auto& o = b.world.clients.at(id);
            same = same && c.memory == o.memory && c.last_local == o.last_local && c.task == o.task;
          }
          ++compared;
          identical += same;
          sim.step();
        }
      }
    }
    r.detail = fmt("idempotence %s; max rel diff vs summation oracle %.1e; %zu/%zu rounds bit-identical under "
                   "permuted processing",
                   idem ? "exact" : "BROKEN", worst, identical, compared);
    r.passed = idem && worst <= 1e-12 && identical == compared;
  });
}

struct MethodMeans {
  double glfc = 0.0, icarl = 0.0, finetune = 0.0;
};

inline double mean_average_accuracy(ExperimentConfig cfg, const std::string& method) {
  double s = 0.0;
  cfg.method = method;
  for (std::uint64_t seed : cfg.seeds) {
    cfg.seed = seed;
    s += run_method(cfg).average_accuracy;
  }
  return s / static_cast<double>(cfg.seeds.size());
}

// 9. Desk-scale method ordering.
inline CheckResult method_ordering(const ExperimentConfig& desk = desk_profile()) {
  return detail::timed(9, "desk-scale ordering GLFC >= icarl-fl >= finetune-fl", [&](CheckResult& r) {
    MethodMeans m;
    m.glfc = mean_average_accuracy(desk, "glfc");
    m.icarl = mean_average_accuracy(desk, "icarl-fl");
    m.finetune = mean_average_accuracy(desk, "finetune-fl");
    const double margin = 100.0 * (m.glfc - m.finetune);
    r.detail = detail::fmt("mean avg accuracy GLFC %.2f, icarl-fl %.2f, finetune-fl %.2f over %zu seeds; "
                           "margin %.2f points (required %.1f)",
                           100 * m.glfc, 100 * m.icarl, 100 * m.finetune, desk.seeds.size(), margin,
                           kOrderingMarginPoints);
    r.passed = m.glfc >= m.icarl && m.icarl >= m.finetune && margin >= kOrderingMarginPoints;
  });
}

// 10. Accuracy does not fall as memory grows (1-point tolerance).
inline CheckResult memory_trend(const ExperimentConfig& desk = desk_profile()) {
  return detail::timed(10, "memory sweep trend over capacities 8, 16, 32", [&](CheckResult& r) {
    const std::vector<std::size_t> caps{8, 16, 32};
    const auto rows = memory_sweep(desk, caps);
    bool ok = true;
    std::string table;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      table += detail::fmt("%s%zu:%.2f", i ? ", " : "", rows[i].capacity, 100 * rows[i].mean_average_accuracy);
      if (i > 0) ok = ok && rows[i].mean_average_accuracy >= rows[i - 1].mean_average_accuracy - 0.01;
    }
    r.detail = "mean avg accuracy by capacity " + table;
    r.passed = ok;
  });
}

// 11. Same config and seed give byte-identical metrics files.
inline CheckResult determinism(const ExperimentConfig& desk = desk_profile()) {
  return detail::timed(11, "byte-identical metrics for repeated runs", [&](CheckResult& r) {
    namespace fs = std::filesystem;
    const fs::path root = fs::temp_directory_path() / ("glfc-determinism-" + run_id(desk));
    const auto once = [&](const char* sub) {
      std::vector<MetricsRecord> recs{run_method(desk)};
      emit_report(root / sub, desk, recs);
      std::ifstream in(root / sub / "metrics.csv", std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in), {});
    };
    const std::string a = once("a"), b = once("b");
    fs::remove_all(root);
    r.detail = detail::fmt("%zu-byte metrics.csv, %s", a.size(), a == b ? "identical" : "DIFFERENT");
    r.passed = !a.empty() && a == b;
  });
}

inline std::vector<CheckResult> run_all() {
  return {gradient_oracles(),  weight_normalization(), distillation_target(), transition_detector(),
          label_recovery(),    reconstruction(),       memory_quota(),        federation_algebra(),
          method_ordering(),   memory_trend(),         determinism()};
}

inline std::string format_line(const CheckResult& r) {
  return detail::fmt("[%s] criterion %2d: %s -- %s (%.2fs)", r.passed ? "PASS" : "FAIL", r.id, r.name.c_str(),
                     r.detail.c_str(), r.seconds);
}

}  // namespace glfc::selftest
