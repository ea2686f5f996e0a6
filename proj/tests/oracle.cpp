#include "oracle.hpp"

#include <cmath>
#include <stdexcept>

namespace oracle {

using hass::Tensor;

Mat from_tensor2(const Tensor& t) {
  if (t.rank() != 2) throw std::logic_error("oracle: expected a 2-D tensor");
  Mat m(t.extent(0), Vec(t.extent(1)));
  for (std::size_t i = 0; i < t.extent(0); ++i) {
    for (std::size_t j = 0; j < t.extent(1); ++j) m[i][j] = t.at(i, j);
  }
  return m;
}

Vec from_tensor1(const Tensor& t) {
  Vec v(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) v[i] = t[i];
  return v;
}

Mat matmul(const Mat& a, const Mat& b) {
  const std::size_t p = a.size(), q = b.size(), r = b[0].size();
  Mat out(p, Vec(r, 0.0));
  // j-outer loop order, distinct from the production kernel
  for (std::size_t j = 0; j < r; ++j) {
    for (std::size_t i = 0; i < p; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < q; ++k) acc += a[i][k] * b[k][j];
      out[i][j] = acc;
    }
  }
  return out;
}

Mat transpose(const Mat& a) {
  Mat out(a[0].size(), Vec(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[0].size(); ++j) out[j][i] = a[i][j];
  }
  return out;
}

Mat add(const Mat& a, const Mat& b) {
  Mat out = a;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[0].size(); ++j) out[i][j] += b[i][j];
  }
  return out;
}

Mat add_bias(const Mat& x, const Vec& b) {
  Mat out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < x[0].size(); ++j) out[i][j] += b[i];
  }
  return out;
}

Mat scale(const Mat& a, double s) {
  Mat out = a;
  for (auto& row : out) {
    for (double& v : row) v *= s;
  }
  return out;
}

Mat softmax_rows(const Mat& a) {
  Mat out = a;
  for (auto& row : out) {
    double m = row[0];
    for (double v : row) m = std::max(m, v);
    double denom = 0.0;
    for (double& v : row) {
      v = std::exp(v - m);
      denom += v;
    }
    for (double& v : row) v /= denom;
  }
  return out;
}

Vec layer_norm(const Vec& x, const Vec& gain, const Vec& bias, double eps) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = gain[i] * (x[i] - mean) / std::sqrt(var + eps) + bias[i];
  }
  return out;
}

Mat layer_norm_tokens(const Mat& x, const Vec& gain, const Vec& bias, double eps) {
  const std::size_t d = x.size(), n = x[0].size();
  Mat out(d, Vec(n));
  for (std::size_t j = 0; j < n; ++j) {
    Vec token(d);
    for (std::size_t i = 0; i < d; ++i) token[i] = x[i][j];
    Vec normed = layer_norm(token, gain, bias, eps);
    for (std::size_t i = 0; i < d; ++i) out[i][j] = normed[i];
  }
  return out;
}

Mat dot_product_attention(const Mat& q, const Mat& k, const Mat& v,
                          const hass::AttentionParams& params) {
  const std::size_t m = params.head_count;
  const double denom = std::sqrt(static_cast<double>(params.key_dim) / static_cast<double>(m));
  Mat stacked;
  for (std::size_t h = 0; h < m; ++h) {
    const auto& head = params.heads[h];
    Mat qn = add_bias(matmul(from_tensor2(head.wq), q), from_tensor1(head.bq));
    Mat kn = add_bias(matmul(from_tensor2(head.wk), k), from_tensor1(head.bk));
    Mat vn = add_bias(matmul(from_tensor2(head.wv), v), from_tensor1(head.bv));
    Mat attn = softmax_rows(scale(matmul(transpose(qn), kn), 1.0 / denom));
    Mat head_out = matmul(vn, transpose(attn));
    for (auto& row : head_out) stacked.push_back(row);
  }
  return add_bias(matmul(from_tensor2(params.wo), stacked), from_tensor1(params.bo));
}

Mat ffn(const Mat& x, const hass::FfnParams& params) {
  Mat hidden = add_bias(matmul(from_tensor2(params.w1), x), from_tensor1(params.b1));
  for (auto& row : hidden) {
    for (double& v : row) v = v > 0.0 ? v : 0.0;
  }
  return add_bias(matmul(from_tensor2(params.w2), hidden), from_tensor1(params.b2));
}

Mat encoder_block(const Mat& tokens, const hass::EncoderBlockParams& params) {
  Mat attn = dot_product_attention(tokens, tokens, tokens, params.attn);
  Mat f = layer_norm_tokens(add(tokens, attn), from_tensor1(params.ln1.gain),
                            from_tensor1(params.ln1.bias), params.ln1.eps);
  Mat ff = ffn(f, params.ffn);
  return layer_norm_tokens(add(f, ff), from_tensor1(params.ln2.gain),
                           from_tensor1(params.ln2.bias), params.ln2.eps);
}

Mat channel_tokens(const Tensor& input) {
  const std::size_t c = input.extent(0), t = input.extent(1), d = input.extent(2);
  Mat out(t * d, Vec(c));
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ti = 0; ti < t; ++ti) {
      for (std::size_t di = 0; di < d; ++di) out[ti * d + di][ci] = input.at(ci, ti, di);
    }
  }
  return out;
}

Tensor from_channel_tokens(const Mat& tokens, std::size_t c, std::size_t t, std::size_t d) {
  Tensor out({c, t, d});
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ti = 0; ti < t; ++ti) {
      for (std::size_t di = 0; di < d; ++di) out.at(ci, ti, di) = tokens[ti * d + di][ci];
    }
  }
  return out;
}

Mat time_tokens(const Tensor& input) {
  const std::size_t c = input.extent(0), t = input.extent(1), d = input.extent(2);
  Mat out(c * d, Vec(t));
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ti = 0; ti < t; ++ti) {
      for (std::size_t di = 0; di < d; ++di) out[ci * d + di][ti] = input.at(ci, ti, di);
    }
  }
  return out;
}

Tensor from_time_tokens(const Mat& tokens, std::size_t c, std::size_t t, std::size_t d) {
  Tensor out({c, t, d});
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ti = 0; ti < t; ++ti) {
      for (std::size_t di = 0; di < d; ++di) out.at(ci, ti, di) = tokens[ci * d + di][ti];
    }
  }
  return out;
}

Tensor intra_block(const Tensor& input, const hass::EncoderBlockParams& params) {
  const Mat out = encoder_block(channel_tokens(input), params);
  return from_channel_tokens(out, input.extent(0), input.extent(1), input.extent(2));
}

Tensor inter_block(const Tensor& input, const hass::EncoderBlockParams& params) {
  const Mat out = encoder_block(time_tokens(input), params);
  return from_time_tokens(out, input.extent(0), input.extent(1), input.extent(2));
}

Tensor encode(const Tensor& input, const hass::HassEncoderParams& params) {
  return inter_block(intra_block(input, params.intra), params.inter);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return 1e300;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

double max_abs_diff(const Mat& a, const Tensor& b) {
  if (b.rank() != 2 || a.size() != b.extent(0) || a[0].size() != b.extent(1)) return 1e300;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[0].size(); ++j) {
      worst = std::max(worst, std::abs(a[i][j] - b.at(i, j)));
    }
  }
  return worst;
}

}  // namespace oracle
