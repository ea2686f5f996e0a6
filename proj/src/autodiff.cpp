#include "hass/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace hass {

namespace {

// C[p x r] += A[p x q] * B[q x r]
void mm_acc_nn(const double* a, const double* b, double* c, std::size_t p, std::size_t q,
               std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = a[i * q + k];
      if (aik == 0.0) continue;
      const double* brow = b + k * r;
      double* crow = c + i * r;
      for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
    }
  }
}

// C[p x q] += A[p x r] * B[q x r]^T
void mm_acc_nt(const double* a, const double* b, double* c, std::size_t p, std::size_t r,
               std::size_t q) {
  for (std::size_t i = 0; i < p; ++i) {
    const double* arow = a + i * r;
    for (std::size_t j = 0; j < q; ++j) {
      const double* brow = b + j * r;
      double acc = 0.0;
      for (std::size_t k = 0; k < r; ++k) acc += arow[k] * brow[k];
      c[i * q + j] += acc;
    }
  }
}

// C[q x r] += A[p x q]^T * B[p x r]
void mm_acc_tn(const double* a, const double* b, double* c, std::size_t p, std::size_t q,
               std::size_t r) {
  for (std::size_t k = 0; k < p; ++k) {
    const double* arow = a + k * q;
    const double* brow = b + k * r;
    for (std::size_t i = 0; i < q; ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* crow = c + i * r;
      for (std::size_t j = 0; j < r; ++j) crow[j] += aki * brow[j];
    }
  }
}

}  // namespace

Var Tape::push(Tensor value, std::vector<std::size_t> parents,
               std::function<void(Tape&, std::size_t)> backward_fn) {
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.backward = std::move(backward_fn);
  nodes_.push_back(std::move(n));
  grads_ready_ = false;
  return Var{nodes_.size() - 1};
}

void Tape::check_var(Var v, const char* op) const {
  if (!v.valid() || v.id >= nodes_.size()) {
    throw ShapeError(std::string(op) + ": var was not recorded on this tape");
  }
}

const Tape::Node& Tape::node(Var v) const { return nodes_[v.id]; }

Var Tape::leaf(Tensor value) { return push(std::move(value), {}, nullptr); }

const Tensor& Tape::value(Var v) const {
  check_var(v, "value");
  return nodes_[v.id].value;
}

const Tensor& Tape::grad(Var v) const {
  check_var(v, "grad");
  if (!grads_ready_) throw std::logic_error("grad: no backward pass has been run");
  return nodes_[v.id].grad;
}

Var Tape::matmul(Var a, Var b) {
  check_var(a, "matmul");
  check_var(b, "matmul");
  const Tensor& ta = node(a).value;
  const Tensor& tb = node(b).value;
  if (ta.rank() != 2 || tb.rank() != 2 || ta.extent(1) != tb.extent(0)) {
    throw ShapeError("matmul: incompatible shapes " + ta.shape_str() + " and " + tb.shape_str());
  }
  const std::size_t p = ta.extent(0), q = ta.extent(1), r = tb.extent(1);
  Tensor out({p, r});
  mm_acc_nn(ta.data(), tb.data(), out.data(), p, q, r);
  return push(std::move(out), {a.id, b.id}, [p, q, r](Tape& t, std::size_t self) {
    Node& n = t.nodes_[self];
    Node& na = t.nodes_[n.parents[0]];
    Node& nb = t.nodes_[n.parents[1]];
    mm_acc_nt(n.grad.data(), nb.value.data(), na.grad.data(), p, r, q);
    mm_acc_tn(na.value.data(), n.grad.data(), nb.grad.data(), p, q, r);
  });
}

Var Tape::add(Var a, Var b) {
  check_var(a, "add");
  check_var(b, "add");
  const Tensor& ta = node(a).value;
  const Tensor& tb = node(b).value;
  if (!ta.same_shape(tb)) {
    throw ShapeError("add: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  }
  Tensor out(ta.shape());
  const std::size_t n = ta.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = ta[i] + tb[i];
  return push(std::move(out), {a.id, b.id}, [](Tape& t, std::size_t self) {
    Node& n = t.nodes_[self];
    Node& na = t.nodes_[n.parents[0]];
    Node& nb = t.nodes_[n.parents[1]];
    const std::size_t sz = n.grad.size();
    for (std::size_t i = 0; i < sz; ++i) {
      na.grad[i] += n.grad[i];
      nb.grad[i] += n.grad[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  check_var(a, "mul");
  check_var(b, "mul");
  const Tensor& ta = node(a).value;
  const Tensor& tb = node(b).value;
  if (!ta.same_shape(tb)) {
    throw ShapeError("mul: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  }
  Tensor out(ta.shape());
  const std::size_t n = ta.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = ta[i] * tb[i];
  return push(std::move(out), {a.id, b.id}, [](Tape& t, std::size_t self) {
    Node& n = t.nodes_[self];
    Node& na = t.nodes_[n.parents[0]];
    Node& nb = t.nodes_[n.parents[1]];
    const std::size_t sz = n.grad.size();
    for (std::size_t i = 0; i < sz; ++i) {
      na.grad[i] += n.grad[i] * nb.value[i];
      nb.grad[i] += n.grad[i] * na.value[i];
    }
  });
}

Var Tape::add_bias_broadcast(Var x, Var b) {
  check_var(x, "add_bias_broadcast");
  check_var(b, "add_bias_broadcast");
  const Tensor& tx = node(x).value;
  const Tensor& tb = node(b).value;
  if (tx.rank() != 2 || tb.rank() != 1 || tx.extent(0) != tb.extent(0)) {
    throw ShapeError("add_bias_broadcast: shape mismatch " + tx.shape_str() + " vs " +
                     tb.shape_str());
  }
  const std::size_t d = tx.extent(0), n = tx.extent(1);
  Tensor out({d, n});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = tx.at(i, j) + tb[i];
  }
  return push(std::move(out), {x.id, b.id}, [d, n](Tape& t, std::size_t self) {
    Node& node = t.nodes_[self];
    Node& nx = t.nodes_[node.parents[0]];
    Node& nb = t.nodes_[node.parents[1]];
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double g = node.grad.at(i, j);
        nx.grad.at(i, j) += g;
        acc += g;
      }
      nb.grad[i] += acc;
    }
  });
}

Var Tape::softmax_rows(Var x) {
  check_var(x, "softmax_rows");
  const Tensor& tx = node(x).value;
  if (tx.rank() != 2) {
    throw ShapeError("softmax_rows: expected a 2-D tensor, got " + tx.shape_str());
  }
  const std::size_t r = tx.extent(0), c = tx.extent(1);
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = tx.data() + i * c;
    double m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double denom = 0.0;
    double* orow = out.data() + i * c;
    for (std::size_t j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - m);
      denom += orow[j];
    }
    for (std::size_t j = 0; j < c; ++j) orow[j] /= denom;
  }
  return push(std::move(out), {x.id}, [r, c](Tape& t, std::size_t self) {
    Node& n = t.nodes_[self];
    Node& nx = t.nodes_[n.parents[0]];
    for (std::size_t i = 0; i < r; ++i) {
      const double* y = n.value.data() + i * c;
      const double* g = n.grad.data() + i * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
      double* gx = nx.grad.data() + i * c;
      for (std::size_t j = 0; j < c; ++j) gx[j] += y[j] * (g[j] - dot);
    }
  });
}

Var Tape::relu(Var x) {
  check_var(x, "relu");
  const Tensor& tx = node(x).value;
  Tensor out(tx.shape());
  const std::size_t n = tx.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = tx[i] > 0.0 ? tx[i] : 0.0;
  return push(std::move(out), {x.id}, [](Tape& t, std::size_t self) {
    Node& n = t.nodes_[self];
    Node& nx = t.nodes_[n.parents[0]];
    const std::size_t sz = n.grad.size();
    for (std::size_t i = 0; i < sz; ++i) {
      if (nx.value[i] > 0.0) nx.grad[i] += n.grad[i];
    }
  });
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  check_var(x, "layer_norm");
  check_var(gain, "layer_norm");
  check_var(bias, "layer_norm");
  if (eps <= 0.0) throw ShapeError("layer_norm: eps must be positive");
  const Tensor& tx = node(x).value;
  const Tensor& tg = node(gain).value;
  const Tensor& tb = node(bias).value;
  if (tx.rank() > 2) {
    throw ShapeError("layer_norm: expected 1-D or 2-D input, got " + tx.shape_str());
  }
  const std::size_t d = tx.extent(0);
  const std::size_t n = tx.rank() == 2 ? tx.extent(1) : 1;
  if (tg.rank() != 1 || tb.rank() != 1 || tg.extent(0) != d || tb.extent(0) != d) {
    throw ShapeError("layer_norm: affine params " + tg.shape_str() + ", " + tb.shape_str() +
                     " do not match input " + tx.shape_str());
  }
  // Tokens are columns; normalization runs over the d axis.
  Tensor out(tx.shape());
  for (std::size_t j = 0; j < n; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += tx[i * n + j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double c = tx[i * n + j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv_sigma = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      out[i * n + j] = tg[i] * ((tx[i * n + j] - mean) * inv_sigma) + tb[i];
    }
  }
  return push(std::move(out), {x.id, gain.id, bias.id}, [d, n, eps](Tape& t, std::size_t self) {
    Node& node = t.nodes_[self];
    Node& nx = t.nodes_[node.parents[0]];
    Node& ng = t.nodes_[node.parents[1]];
    Node& nb = t.nodes_[node.parents[2]];
    const double dd = static_cast<double>(d);
    std::vector<double> xhat(d), dxhat(d);
    for (std::size_t j = 0; j < n; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < d; ++i) mean += nx.value[i * n + j];
      mean /= dd;
      double var = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double c = nx.value[i * n + j] - mean;
        var += c * c;
      }
      var /= dd;
      const double inv_sigma = 1.0 / std::sqrt(var + eps);
      double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        xhat[i] = (nx.value[i * n + j] - mean) * inv_sigma;
        const double g = node.grad[i * n + j];
        ng.grad[i] += g * xhat[i];
        nb.grad[i] += g;
        dxhat[i] = g * ng.value[i];
        mean_dxhat += dxhat[i];
        mean_dxhat_xhat += dxhat[i] * xhat[i];
      }
      mean_dxhat /= dd;
      mean_dxhat_xhat /= dd;
      for (std::size_t i = 0; i < d; ++i) {
        nx.grad[i * n + j] += inv_sigma * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
      }
    }
  });
}

Var Tape::transpose(Var x) {
  check_var(x, "transpose");
  const Tensor& tx = node(x).value;
  if (tx.rank() != 2) throw ShapeError("transpose: expected a 2-D tensor, got " + tx.shape_str());
  const std::size_t r = tx.extent(0), c = tx.extent(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = tx.at(i, j);
  }
  return push(std::move(out), {x.id}, [r, c](Tape& t, std::size_t self) {
    Node& n = t.nodes_[self];
    Node& nx = t.nodes_[n.parents[0]];
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) nx.grad.at(i, j) += n.grad.at(j, i);
    }
  });
}

Var Tape::swap_axes_12(Var x) {
  check_var(x, "swap_axes_12");
  const Tensor& tx = node(x).value;
  if (tx.rank() != 3) {
    throw ShapeError("swap_axes_12: expected a 3-D tensor, got " + tx.shape_str());
  }
  const std::size_t a = tx.extent(0), b = tx.extent(1), c = tx.extent(2);
  Tensor out({a, c, b});
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      for (std::size_t k = 0; k < c; ++k) out.at(i, k, j) = tx.at(i, j, k);
    }
  }
  return push(std::move(out), {x.id}, [a, b, c](Tape& t, std::size_t self) {
    Node& n = t.nodes_[self];
    Node& nx = t.nodes_[n.parents[0]];
    for (std::size_t i = 0; i < a; ++i) {
      for (std::size_t j = 0; j < b; ++j) {
        for (std::size_t k = 0; k < c; ++k) nx.grad.at(i, j, k) += n.grad.at(i, k, j);
      }
    }
  });
}

Var Tape::reshape(Var x, std::vector<std::size_t> shape) {
  check_var(x, "reshape");
  const Tensor& tx = node(x).value;
  if (shape_numel(shape) != tx.size()) {
    throw ShapeError("reshape: cannot reshape " + tx.shape_str() + " to " +
                     shape_to_string(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(tx.storage()));
  return push(std::move(out), {x.id}, [](Tape& t, std::size_t self) {
    Node& n = t.nodes_[self];
    Node& nx = t.nodes_[n.parents[0]];
    const std::size_t sz = n.grad.size();
    for (std::size_t i = 0; i < sz; ++i) nx.grad[i] += n.grad[i];
  });
}

Var Tape::scale(Var x, double s) {
  check_var(x, "scale");
  const Tensor& tx = node(x).value;
  Tensor out(tx.shape());
  const std::size_t n = tx.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = tx[i] * s;
  return push(std::move(out), {x.id}, [s](Tape& t, std::size_t self) {
    Node& n = t.nodes_[self];
    Node& nx = t.nodes_[n.parents[0]];
    const std::size_t sz = n.grad.size();
    for (std::size_t i = 0; i < sz; ++i) nx.grad[i] += n.grad[i] * s;
  });
}

Var Tape::vstack(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("vstack: no parts");
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> parent_ids;
  parent_ids.reserve(parts.size());
  for (Var p : parts) {
    check_var(p, "vstack");
    const Tensor& tp = node(p).value;
    if (tp.rank() != 2) throw ShapeError("vstack: expected 2-D parts, got " + tp.shape_str());
    if (cols == 0) {
      cols = tp.extent(1);
    } else if (tp.extent(1) != cols) {
      throw ShapeError("vstack: column mismatch " + std::to_string(cols) + " vs " +
                       tp.shape_str());
    }
    rows += tp.extent(0);
    parent_ids.push_back(p.id);
  }
  Tensor out({rows, cols});
  std::size_t row0 = 0;
  for (Var p : parts) {
    const Tensor& tp = node(p).value;
    std::copy(tp.data(), tp.data() + tp.size(), out.data() + row0 * cols);
    row0 += tp.extent(0);
  }
  return push(std::move(out), std::move(parent_ids), [cols](Tape& t, std::size_t self) {
    Node& n = t.nodes_[self];
    std::size_t row0 = 0;
    for (std::size_t pid : n.parents) {
      Node& np = t.nodes_[pid];
      const std::size_t sz = np.grad.size();
      const double* g = n.grad.data() + row0 * cols;
      for (std::size_t i = 0; i < sz; ++i) np.grad[i] += g[i];
      row0 += np.value.extent(0);
    }
  });
}

Var Tape::sum(Var x) {
  check_var(x, "sum");
  const Tensor& tx = node(x).value;
  double acc = 0.0;
  for (std::size_t i = 0; i < tx.size(); ++i) acc += tx[i];
  return push(Tensor::scalar(acc), {x.id}, [](Tape& t, std::size_t self) {
    Node& n = t.nodes_[self];
    Node& nx = t.nodes_[n.parents[0]];
    const double g = n.grad[0];
    const std::size_t sz = nx.grad.size();
    for (std::size_t i = 0; i < sz; ++i) nx.grad[i] += g;
  });
}

Var Tape::mean_cols(Var x) {
  check_var(x, "mean_cols");
  const Tensor& tx = node(x).value;
  if (tx.rank() != 2) throw ShapeError("mean_cols: expected a 2-D tensor, got " + tx.shape_str());
  const std::size_t r = tx.extent(0), c = tx.extent(1);
  Tensor out({r});
  for (std::size_t i = 0; i < r; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += tx.at(i, j);
    out[i] = acc / static_cast<double>(c);
  }
  return push(std::move(out), {x.id}, [r, c](Tape& t, std::size_t self) {
    Node& n = t.nodes_[self];
    Node& nx = t.nodes_[n.parents[0]];
    const double inv = 1.0 / static_cast<double>(c);
    for (std::size_t i = 0; i < r; ++i) {
      const double g = n.grad[i] * inv;
      for (std::size_t j = 0; j < c; ++j) nx.grad.at(i, j) += g;
    }
  });
}

Var Tape::conv1d_time(Var x, Var w, Var b) {
  check_var(x, "conv1d_time");
  check_var(w, "conv1d_time");
  check_var(b, "conv1d_time");
  const Tensor& tx = node(x).value;
  const Tensor& tw = node(w).value;
  const Tensor& tb = node(b).value;
  if (tx.rank() != 2 || tw.rank() != 3 || tb.rank() != 1) {
    throw ShapeError("conv1d_time: expected x[c x t], w[f x c x k], b[f]; got " + tx.shape_str() +
                     ", " + tw.shape_str() + ", " + tb.shape_str());
  }
  const std::size_t c = tx.extent(0), t_len = tx.extent(1);
  const std::size_t f = tw.extent(0), k = tw.extent(2);
  if (tw.extent(1) != c || tb.extent(0) != f) {
    throw ShapeError("conv1d_time: weight shape " + tw.shape_str() + " does not match input " +
                     tx.shape_str());
  }
  if (k < 1 || k > t_len) {
    throw ShapeError("conv1d_time: kernel " + std::to_string(k) + " exceeds time extent " +
                     std::to_string(t_len));
  }
  const std::size_t t_out = t_len - k + 1;
  Tensor out({f, t_out});
  for (std::size_t fi = 0; fi < f; ++fi) {
    for (std::size_t to = 0; to < t_out; ++to) {
      double acc = tb[fi];
      for (std::size_t ci = 0; ci < c; ++ci) {
        const double* xrow = tx.data() + ci * t_len + to;
        const double* wrow = tw.data() + (fi * c + ci) * k;
        for (std::size_t ki = 0; ki < k; ++ki) acc += wrow[ki] * xrow[ki];
      }
      out.at(fi, to) = acc;
    }
  }
  return push(std::move(out), {x.id, w.id, b.id},
              [c, t_len, f, k, t_out](Tape& t, std::size_t self) {
                Node& n = t.nodes_[self];
                Node& nx = t.nodes_[n.parents[0]];
                Node& nw = t.nodes_[n.parents[1]];
                Node& nb = t.nodes_[n.parents[2]];
                for (std::size_t fi = 0; fi < f; ++fi) {
                  for (std::size_t to = 0; to < t_out; ++to) {
                    const double g = n.grad.at(fi, to);
                    if (g == 0.0) continue;
                    nb.grad[fi] += g;
                    for (std::size_t ci = 0; ci < c; ++ci) {
                      const double* xrow = nx.value.data() + ci * t_len + to;
                      const double* wrow = nw.value.data() + (fi * c + ci) * k;
                      double* gxrow = nx.grad.data() + ci * t_len + to;
                      double* gwrow = nw.grad.data() + (fi * c + ci) * k;
                      for (std::size_t ki = 0; ki < k; ++ki) {
                        gxrow[ki] += g * wrow[ki];
                        gwrow[ki] += g * xrow[ki];
                      }
                    }
                  }
                }
              });
}

Var Tape::cross_entropy_rows(Var logits, std::vector<std::size_t> labels) {
  check_var(logits, "cross_entropy_rows");
  const Tensor& tl = node(logits).value;
  if (tl.rank() != 2) {
    throw ShapeError("cross_entropy_rows: expected 2-D logits, got " + tl.shape_str());
  }
  const std::size_t b = tl.extent(0), k = tl.extent(1);
  if (labels.size() != b) {
    throw ShapeError("cross_entropy_rows: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(b) + " rows");
  }
  for (std::size_t lab : labels) {
    if (lab >= k) throw ShapeError("cross_entropy_rows: label " + std::to_string(lab) + " >= " +
                                   std::to_string(k));
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = tl.data() + i * k;
    double m = row[0];
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - m);
    loss += m + std::log(denom) - row[labels[i]];
  }
  loss /= static_cast<double>(b);
  return push(Tensor::scalar(loss), {logits.id},
              [b, k, labels = std::move(labels)](Tape& t, std::size_t self) {
                Node& n = t.nodes_[self];
                Node& nl = t.nodes_[n.parents[0]];
                const double g = n.grad[0] / static_cast<double>(b);
                for (std::size_t i = 0; i < b; ++i) {
                  const double* row = nl.value.data() + i * k;
                  double m = row[0];
                  for (std::size_t j = 1; j < k; ++j) m = std::max(m, row[j]);
                  double denom = 0.0;
                  for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - m);
                  double* grow = nl.grad.data() + i * k;
                  for (std::size_t j = 0; j < k; ++j) {
                    const double p = std::exp(row[j] - m) / denom;
                    grow[j] += g * (p - (j == labels[i] ? 1.0 : 0.0));
                  }
                }
              });
}

void Tape::backward(Var output) {
  check_var(output, "backward");
  const Tensor& out_val = nodes_[output.id].value;
  if (out_val.size() != 1) {
    throw ShapeError("backward: output must be scalar, got shape " + out_val.shape_str());
  }
  for (Node& n : nodes_) {
    n.grad = Tensor(n.value.shape());  // zero accumulators
  }
  nodes_[output.id].grad[0] = 1.0;
  for (std::size_t u = output.id + 1; u-- > 0;) {
    if (nodes_[u].backward) nodes_[u].backward(*this, u);
  }
  grads_ready_ = true;
}

}  // namespace hass
