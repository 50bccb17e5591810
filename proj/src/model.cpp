#include "sparsetrain/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sparsetrain/errors.hpp"

namespace sparsetrain {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

ActShape output_shape(const Layer& layer, const ActShape& in, std::size_t i) {
  auto fail = [i](const std::string& why) -> ActShape {
    throw ContractError("layer " + std::to_string(i) + ": " + why);
  };
  return std::visit(
      Overloaded{
          [&](const ConvLayer& l) -> ActShape {
            const auto& s = l.weight.shape();
            if (s.in_channels != in.channels) {
              return fail("conv expects " + std::to_string(s.in_channels) +
                          " input channels, got " +
                          std::to_string(in.channels));
            }
            if (s.kernel_h > in.height || s.kernel_w > in.width) {
              return fail("conv kernel larger than input");
            }
            if (l.bias.size() != s.out_channels) return fail("bias size");
            if (l.mask.dims() != l.weight.dims()) return fail("mask shape");
            if (l.weight_momentum.size() != l.weight.size() ||
                l.bias_momentum.size() != l.bias.size()) {
              return fail("momentum shape");
            }
            return {s.out_channels, in.height - s.kernel_h + 1,
                    in.width - s.kernel_w + 1};
          },
          [&](const PoolLayer& l) -> ActShape {
            if (l.window == 0 || in.height % l.window || in.width % l.window) {
              return fail("pool window must divide the input");
            }
            return {in.channels, in.height / l.window, in.width / l.window};
          },
          [&](const FlattenLayer&) -> ActShape { return {in.size(), 1, 1}; },
          [&](const FCLayer& l) -> ActShape {
            if (in.height != 1 || in.width != 1) {
              return fail("FC input must be flattened");
            }
            if (l.weight.rows() != in.channels) {
              return fail("FC expects " + std::to_string(l.weight.rows()) +
                          " inputs, got " + std::to_string(in.channels));
            }
            if (l.bias.size() != l.weight.cols()) return fail("bias size");
            if (l.mask.dims() != l.weight.dims()) return fail("mask shape");
            if (l.weight_momentum.size() != l.weight.size() ||
                l.bias_momentum.size() != l.bias.size()) {
              return fail("momentum shape");
            }
            return {l.weight.cols(), 1, 1};
          },
      },
      layer);
}

void conv_forward(const ConvLayer& l, const ActShape& in, const ActShape& out,
                  std::size_t n, const double* x, double* y,
                  MultiplyCounter* counter) {
  const auto& s = l.weight.shape();
  const std::size_t out_plane = out.height * out.width;
  for (std::size_t b = 0; b < n; ++b) {
    const double* xb = x + b * in.size();
    double* yb = y + b * out.size();
    for (std::size_t k = 0; k < s.out_channels; ++k) {
      double* yk = yb + k * out_plane;
      std::fill_n(yk, out_plane, l.bias[k]);
      for (std::size_t c = 0; c < s.in_channels; ++c) {
        const double* xc = xb + c * in.height * in.width;
        for (std::size_t r = 0; r < s.kernel_h; ++r) {
          for (std::size_t q = 0; q < s.kernel_w; ++q) {
            const double w = l.weight.at(k, c, r, q);
            if (w == 0.0) continue;
            if (counter) counter->multiplies += out_plane;
            for (std::size_t oy = 0; oy < out.height; ++oy) {
              const double* row = xc + (oy + r) * in.width + q;
              double* yrow = yk + oy * out.width;
              for (std::size_t ox = 0; ox < out.width; ++ox) {
                yrow[ox] += w * row[ox];
              }
            }
          }
        }
      }
      if (l.relu) {
        for (std::size_t i = 0; i < out_plane; ++i) yk[i] = std::max(yk[i], 0.0);
      }
    }
  }
}

void pool_forward(std::size_t window, const ActShape& in, const ActShape& out,
                  std::size_t n, const double* x, double* y) {
  const double scale = 1.0 / static_cast<double>(window * window);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < in.channels; ++c) {
      const double* xc = x + b * in.size() + c * in.height * in.width;
      double* yc = y + b * out.size() + c * out.height * out.width;
      for (std::size_t oy = 0; oy < out.height; ++oy) {
        for (std::size_t ox = 0; ox < out.width; ++ox) {
          double acc = 0.0;
          for (std::size_t dy = 0; dy < window; ++dy) {
            for (std::size_t dx = 0; dx < window; ++dx) {
              acc += xc[(oy * window + dy) * in.width + ox * window + dx];
            }
          }
          yc[oy * out.width + ox] = acc * scale;
        }
      }
    }
  }
}

void fc_forward(const FCLayer& l, std::size_t n, const double* x, double* y,
                MultiplyCounter* counter) {
  const std::size_t rows = l.weight.rows();
  const std::size_t cols = l.weight.cols();
  const auto w = l.weight.values();
  for (std::size_t b = 0; b < n; ++b) {
    const double* xb = x + b * rows;
    double* yb = y + b * cols;
    std::copy(l.bias.begin(), l.bias.end(), yb);
    for (std::size_t i = 0; i < rows; ++i) {
      const double xi = xb[i];
      const double* wi = w.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) {
        if (wi[j] == 0.0) continue;
        if (counter) ++counter->multiplies;
        yb[j] += xi * wi[j];
      }
    }
  }
}

// activations[i] is the input of layer i; activations.back() is the logits.
std::vector<std::vector<double>> run_forward(const ToyModel& model,
                                             const Batch& batch,
                                             MultiplyCounter* counter) {
  if (batch.shape != model.input_shape()) {
    throw ContractError("forward: batch sample shape does not match model");
  }
  if (batch.data.size() != batch.count * batch.shape.size()) {
    throw ContractError("forward: batch data size mismatch");
  }
  const auto& layers = model.layers();
  std::vector<std::vector<double>> acts(layers.size() + 1);
  acts[0] = batch.data;
  const std::size_t n = batch.count;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& in = model.shape_before(i);
    const auto& out = model.shape_before(i + 1);
    acts[i + 1].assign(n * out.size(), 0.0);
    const double* x = acts[i].data();
    double* y = acts[i + 1].data();
    std::visit(Overloaded{
                   [&](const ConvLayer& l) {
                     conv_forward(l, in, out, n, x, y, counter);
                   },
                   [&](const PoolLayer& l) {
                     pool_forward(l.window, in, out, n, x, y);
                   },
                   [&](const FlattenLayer&) {
                     std::copy_n(x, n * in.size(), y);
                   },
                   [&](const FCLayer& l) { fc_forward(l, n, x, y, counter); },
               },
               layers[i]);
  }
  return acts;
}

std::string conv_name(const ConvWeight& w) {
  const auto& s = w.shape();
  return "conv" + std::to_string(s.kernel_h) + "x" + std::to_string(s.kernel_w);
}

}  // namespace

// ------------------------------------------------------------- ToyModel

ToyModel::ToyModel(ActShape input, std::vector<Layer> layers)
    : input_(input), layers_(std::move(layers)) {
  if (layers_.empty() || !std::holds_alternative<FCLayer>(layers_.back())) {
    throw ContractError("ToyModel: last layer must be fully connected");
  }
  shapes_.push_back(input_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    shapes_.push_back(output_shape(layers_[i], shapes_.back(), i));
  }
}

std::size_t ToyModel::n_classes() const { return shapes_.back().channels; }

std::vector<std::size_t> ToyModel::prunable_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (std::holds_alternative<ConvLayer>(layers_[i]) ||
        std::holds_alternative<FCLayer>(layers_[i])) {
      out.push_back(i);
    }
  }
  return out;
}

std::optional<std::size_t> ToyModel::last_conv_layer() const {
  std::optional<std::size_t> last;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (std::holds_alternative<ConvLayer>(layers_[i])) last = i;
  }
  return last;
}

std::size_t ToyModel::fc_layer() const { return layers_.size() - 1; }

std::vector<std::span<const double>> ToyModel::prunable_weights() const {
  std::vector<std::span<const double>> out;
  for (auto i : prunable_layers()) {
    std::visit(Overloaded{
                   [&](const ConvLayer& l) { out.push_back(l.weight.values()); },
                   [&](const FCLayer& l) { out.push_back(l.weight.values()); },
                   [](const auto&) {},
               },
               layers_[i]);
  }
  return out;
}

double ToyModel::sparsity() const {
  const auto weights = prunable_weights();
  return measured_sparsity(weights);
}

void ToyModel::apply_masks() {
  for (auto& layer : layers_) {
    std::visit(Overloaded{
                   [](ConvLayer& l) {
                     apply_mask_inplace(l.weight.values(), l.mask);
                     apply_mask_inplace(l.weight_momentum, l.mask);
                   },
                   [](FCLayer& l) {
                     apply_mask_inplace(l.weight.values(), l.mask);
                     apply_mask_inplace(l.weight_momentum, l.mask);
                   },
                   [](auto&) {},
               },
               layer);
  }
}

std::string ToyModel::layer_name(std::size_t i) const {
  const std::string base = std::visit(
      Overloaded{
          [](const ConvLayer& l) { return conv_name(l.weight); },
          [](const PoolLayer&) { return std::string("pool"); },
          [](const FlattenLayer&) { return std::string("flatten"); },
          [](const FCLayer&) { return std::string("fc"); },
      },
      layers_[i]);
  return base + "_" + std::to_string(i);
}

ToyModel make_toy_model(const ModelSpec& spec, ActShape input,
                        std::size_t n_classes, std::mt19937_64& rng) {
  auto he_normal = [&rng](std::span<double> values, std::size_t fan_in) {
    std::normal_distribution<double> dist(
        0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : values) v = dist(rng);
  };
  auto make_conv = [&](std::size_t k, std::size_t c, std::size_t r) {
    ConvLayer l;
    l.weight = ConvWeight(ConvShape{k, c, r, r});
    he_normal(l.weight.values(), c * r * r);
    l.bias.assign(k, 0.0);
    l.mask = PruneMask::ones(l.weight.dims());
    l.weight_momentum.assign(l.weight.size(), 0.0);
    l.bias_momentum.assign(k, 0.0);
    return l;
  };

  std::vector<Layer> layers;
  layers.emplace_back(make_conv(spec.conv3x3_channels, input.channels, 3));
  layers.emplace_back(
      make_conv(spec.conv1x1_channels, spec.conv3x3_channels, 1));
  layers.emplace_back(PoolLayer{spec.pool});
  layers.emplace_back(FlattenLayer{});

  if (input.height < 3 || input.width < 3) {
    throw ContractError("make_toy_model: input must be at least 3x3");
  }
  const std::size_t h = input.height - 2;
  const std::size_t w = input.width - 2;
  if (spec.pool == 0 || h % spec.pool || w % spec.pool) {
    throw ContractError("make_toy_model: pool window must divide " +
                        std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t rows =
      spec.conv1x1_channels * (h / spec.pool) * (w / spec.pool);
  FCLayer fc;
  fc.weight = FCWeight(rows, n_classes);
  he_normal(fc.weight.values(), rows);
  fc.bias.assign(n_classes, 0.0);
  fc.mask = PruneMask::ones(fc.weight.dims());
  fc.weight_momentum.assign(fc.weight.size(), 0.0);
  fc.bias_momentum.assign(n_classes, 0.0);
  layers.emplace_back(std::move(fc));

  return ToyModel(input, std::move(layers));
}

// ------------------------------------------------------ forward / loss

std::vector<double> forward(const ToyModel& model, const Batch& batch,
                            MultiplyCounter* counter) {
  return std::move(run_forward(model, batch, counter).back());
}

double cross_entropy(std::span<const double> logits, std::size_t n_classes,
                     std::span<const int> labels) {
  if (logits.size() != labels.size() * n_classes || labels.empty()) {
    throw ContractError("cross_entropy: logits/labels size mismatch");
  }
  double total = 0.0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const auto row = logits.subspan(b * n_classes, n_classes);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    total += std::log(z) + mx - row[static_cast<std::size_t>(labels[b])];
  }
  return total / static_cast<double>(labels.size());
}

std::vector<int> predict(std::span<const double> logits,
                         std::size_t n_classes) {
  std::vector<int> out(logits.size() / n_classes);
  for (std::size_t b = 0; b < out.size(); ++b) {
    const auto row = logits.subspan(b * n_classes, n_classes);
    out[b] = static_cast<int>(std::max_element(row.begin(), row.end()) -
                              row.begin());
  }
  return out;
}

// ------------------------------------------------------------ backward

Gradients backward(const ToyModel& model, const Batch& batch,
                   std::span<const int> labels) {
  if (labels.size() != batch.count) {
    throw ContractError("backward: label count does not match batch");
  }
  const std::size_t n_classes = model.n_classes();
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes) {
      throw ContractError("backward: label out of range");
    }
  }
  const auto acts = run_forward(model, batch, nullptr);
  const auto& layers = model.layers();
  const std::size_t n = batch.count;

  Gradients g;
  g.loss = cross_entropy(acts.back(), n_classes, labels);
  g.weight.resize(layers.size());
  g.bias.resize(layers.size());

  // d loss / d logits for the mean cross-entropy.
  std::vector<double> dy(acts.back());
  for (std::size_t b = 0; b < n; ++b) {
    double* row = dy.data() + b * n_classes;
    const double mx = *std::max_element(row, row + n_classes);
    double z = 0.0;
    for (std::size_t j = 0; j < n_classes; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < n_classes; ++j) {
      row[j] = std::exp(row[j] - mx) / z / static_cast<double>(n);
    }
    row[labels[b]] -= 1.0 / static_cast<double>(n);
  }

  for (std::size_t i = layers.size(); i-- > 0;) {
    const auto& in = model.shape_before(i);
    const auto& out = model.shape_before(i + 1);
    const auto& x = acts[i];
    std::vector<double> dx(n * in.size(), 0.0);

    std::visit(
        Overloaded{
            [&](const ConvLayer& l) {
              const auto& s = l.weight.shape();
              const std::size_t plane = out.height * out.width;
              if (l.relu) {
                const auto& y = acts[i + 1];
                for (std::size_t e = 0; e < dy.size(); ++e) {
                  if (y[e] <= 0.0) dy[e] = 0.0;
                }
              }
              auto& dw = g.weight[i];
              auto& db = g.bias[i];
              dw.assign(l.weight.size(), 0.0);
              db.assign(s.out_channels, 0.0);
              for (std::size_t b = 0; b < n; ++b) {
                const double* xb = x.data() + b * in.size();
                const double* gb = dy.data() + b * out.size();
                double* dxb = dx.data() + b * in.size();
                for (std::size_t k = 0; k < s.out_channels; ++k) {
                  const double* gk = gb + k * plane;
                  for (std::size_t p = 0; p < plane; ++p) db[k] += gk[p];
                  for (std::size_t c = 0; c < s.in_channels; ++c) {
                    const double* xc = xb + c * in.height * in.width;
                    double* dxc = dxb + c * in.height * in.width;
                    for (std::size_t r = 0; r < s.kernel_h; ++r) {
                      for (std::size_t q = 0; q < s.kernel_w; ++q) {
                        const double w = l.weight.at(k, c, r, q);
                        double acc = 0.0;
                        for (std::size_t oy = 0; oy < out.height; ++oy) {
                          const double* xrow = xc + (oy + r) * in.width + q;
                          double* dxrow = dxc + (oy + r) * in.width + q;
                          const double* grow = gk + oy * out.width;
                          for (std::size_t ox = 0; ox < out.width; ++ox) {
                            acc += grow[ox] * xrow[ox];
                            dxrow[ox] += w * grow[ox];
                          }
                        }
                        dw[l.weight.index(k, c, r, q)] += acc;
                      }
                    }
                  }
                }
              }
              apply_mask_inplace(dw, l.mask);
            },
            [&](const PoolLayer& l) {
              const double scale =
                  1.0 / static_cast<double>(l.window * l.window);
              for (std::size_t b = 0; b < n; ++b) {
                for (std::size_t c = 0; c < in.channels; ++c) {
                  double* dxc = dx.data() + b * in.size() +
                                c * in.height * in.width;
                  const double* gc = dy.data() + b * out.size() +
                                     c * out.height * out.width;
                  for (std::size_t iy = 0; iy < in.height; ++iy) {
                    for (std::size_t ix = 0; ix < in.width; ++ix) {
                      dxc[iy * in.width + ix] =
                          gc[(iy / l.window) * out.width + ix / l.window] *
                          scale;
                    }
                  }
                }
              }
            },
            [&](const FlattenLayer&) { dx = dy; },
            [&](const FCLayer& l) {
              const std::size_t rows = l.weight.rows();
              const std::size_t cols = l.weight.cols();
              const auto w = l.weight.values();
              auto& dw = g.weight[i];
              auto& db = g.bias[i];
              dw.assign(l.weight.size(), 0.0);
              db.assign(cols, 0.0);
              for (std::size_t b = 0; b < n; ++b) {
                const double* xb = x.data() + b * rows;
                const double* gb = dy.data() + b * cols;
                double* dxb = dx.data() + b * rows;
                for (std::size_t j = 0; j < cols; ++j) db[j] += gb[j];
                for (std::size_t r = 0; r < rows; ++r) {
                  double acc = 0.0;
                  for (std::size_t j = 0; j < cols; ++j) {
                    dw[r * cols + j] += xb[r] * gb[j];
                    acc += w[r * cols + j] * gb[j];
                  }
                  dxb[r] = acc;
                }
              }
              apply_mask_inplace(dw, l.mask);
            },
        },
        layers[i]);
    dy = std::move(dx);
  }
  g.input = std::move(dy);
  return g;
}

// ------------------------------------------------------------- update

void sgd_step(ToyModel& model, const Gradients& grads, const SgdParams& p) {
  auto& layers = model.layers();
  if (grads.weight.size() != layers.size()) {
    throw ContractError("sgd_step: gradient list does not match model");
  }
  auto step = [&](std::span<double> w, std::span<double> v,
                  const std::vector<double>& g, double decay) {
    if (g.size() != w.size()) {
      throw ContractError("sgd_step: gradient size mismatch");
    }
    for (std::size_t e = 0; e < w.size(); ++e) {
      v[e] = p.momentum * v[e] + g[e] + decay * w[e];
      w[e] -= p.lr * v[e];
    }
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    std::visit(Overloaded{
                   [&](ConvLayer& l) {
                     step(l.weight.values(), l.weight_momentum, grads.weight[i],
                          p.weight_decay);
                     step(l.bias, l.bias_momentum, grads.bias[i], 0.0);
                     apply_mask_inplace(l.weight.values(), l.mask);
                     apply_mask_inplace(l.weight_momentum, l.mask);
                   },
                   [&](FCLayer& l) {
                     step(l.weight.values(), l.weight_momentum, grads.weight[i],
                          p.weight_decay);
                     step(l.bias, l.bias_momentum, grads.bias[i], 0.0);
                     apply_mask_inplace(l.weight.values(), l.mask);
                     apply_mask_inplace(l.weight_momentum, l.mask);
                   },
                   [](auto&) {},
               },
               layers[i]);
  }
}

}  // namespace sparsetrain
