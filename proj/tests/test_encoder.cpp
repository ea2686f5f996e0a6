#include <doctest.h>

#include <cmath>
#include <cstring>

#include "hass/encoder.hpp"
#include "hass/params_io.hpp"
#include "hass/rng.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace hass;
using testutil::random_tensor;

namespace {

using testutil::random_attention;

Tensor permute_channels(const Tensor& x, const std::vector<std::size_t>& perm) {
  Tensor out(x.shape());
  for (std::size_t c = 0; c < x.extent(0); ++c) {
    for (std::size_t t = 0; t < x.extent(1); ++t) {
      for (std::size_t d = 0; d < x.extent(2); ++d) out.at(c, t, d) = x.at(perm[c], t, d);
    }
  }
  return out;
}

Tensor permute_time(const Tensor& x, const std::vector<std::size_t>& perm) {
  Tensor out(x.shape());
  for (std::size_t c = 0; c < x.extent(0); ++c) {
    for (std::size_t t = 0; t < x.extent(1); ++t) {
      for (std::size_t d = 0; d < x.extent(2); ++d) out.at(c, t, d) = x.at(c, perm[t], d);
    }
  }
  return out;
}

std::vector<std::size_t> random_permutation(std::size_t n, RngStream& rng) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);
  return perm;
}

}  // namespace

TEST_CASE("attention with annihilated value projection broadcasts the output bias") {
  RngStream rng(5);
  AttentionParams p = random_attention(3, 3, 1, rng);
  p.heads[0].wv.fill(0.0);
  p.heads[0].bv.fill(0.0);
  Tensor q = random_tensor({3, 4}, rng);
  Tensor k = random_tensor({3, 4}, rng);
  Tensor v = random_tensor({3, 4}, rng);
  Tensor out = dot_product_attention(q, k, v, p);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) CHECK(out.at(i, j) == doctest::Approx(p.bo[i]));
  }
}

TEST_CASE("single-token attention ignores queries and keys") {
  RngStream rng(6);
  AttentionParams p = random_attention(4, 4, 2, rng);
  Tensor v = random_tensor({4, 1}, rng);
  std::vector<Tensor> attn1, attn2;
  Tensor out1 = dot_product_attention(random_tensor({4, 1}, rng), random_tensor({4, 1}, rng), v,
                                      p, attn1);
  Tensor out2 = dot_product_attention(random_tensor({4, 1}, rng), random_tensor({4, 1}, rng), v,
                                      p, attn2);
  CHECK(oracle::max_abs_diff(out1, out2) <= 1e-15);
  for (const Tensor& a : attn1) {
    CHECK(a.size() == 1);
    CHECK(a[0] == 1.0);
  }
}

TEST_CASE("attention hand case evaluated equation by equation") {
  AttentionParams p;
  p.head_count = 1;
  p.key_dim = 2;
  p.value_dim = 2;
  p.heads.resize(1);
  p.heads[0].wq = Tensor({2, 2}, {1, 0, 0, 1});
  p.heads[0].bq = Tensor({2});
  p.heads[0].wk = Tensor({2, 2}, {1, 0, 0, 1});
  p.heads[0].bk = Tensor({2});
  p.heads[0].wv = Tensor({2, 2}, {1, 0, 0, 1});
  p.heads[0].bv = Tensor({2});
  p.wo = Tensor({2, 2}, {1, 0, 0, 1});
  p.bo = Tensor({2});

  Tensor q({2, 2}, {1, 0, 0, 1});
  Tensor k = q;
  Tensor v({2, 2}, {1, 2, 3, 4});

  std::vector<Tensor> head_attn;
  Tensor out = dot_product_attention(q, k, v, p, head_attn);

  // Scores are I / sqrt(2); each softmax row is (e^s, 1) / (e^s + 1).
  const double s = 1.0 / std::sqrt(2.0);
  const double hi = std::exp(s) / (std::exp(s) + 1.0);
  const double lo = 1.0 - hi;
  REQUIRE(head_attn.size() == 1);
  CHECK(head_attn[0].at(0, 0) == doctest::Approx(hi).epsilon(1e-12));
  CHECK(head_attn[0].at(0, 1) == doctest::Approx(lo).epsilon(1e-12));
  CHECK(head_attn[0].at(1, 0) == doctest::Approx(lo).epsilon(1e-12));
  CHECK(head_attn[0].at(1, 1) == doctest::Approx(hi).epsilon(1e-12));

  // Output columns are the attention-weighted value columns.
  CHECK(out.at(0, 0) == doctest::Approx(hi * 1.0 + lo * 2.0).epsilon(1e-12));
  CHECK(out.at(1, 0) == doctest::Approx(hi * 3.0 + lo * 4.0).epsilon(1e-12));
  CHECK(out.at(0, 1) == doctest::Approx(lo * 1.0 + hi * 2.0).epsilon(1e-12));
  CHECK(out.at(1, 1) == doctest::Approx(lo * 3.0 + hi * 4.0).epsilon(1e-12));

  CHECK(oracle::max_abs_diff(oracle::dot_product_attention(oracle::from_tensor2(q),
                                                           oracle::from_tensor2(k),
                                                           oracle::from_tensor2(v), p),
                             out) <= 1e-14);
}

TEST_CASE("multi-head attention matches the per-head stacking oracle") {
  RngStream rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = 1 + rng.index(3);
    const std::size_t d_k = m * (1 + rng.index(3));
    const std::size_t d_v = m * (1 + rng.index(3));
    const std::size_t n = 1 + rng.index(6);
    AttentionParams p = random_attention(d_k, d_v, m, rng);
    Tensor q = random_tensor({d_k, n}, rng);
    Tensor k = random_tensor({d_k, n}, rng);
    Tensor v = random_tensor({d_v, n}, rng);
    Tensor out = dot_product_attention(q, k, v, p);
    oracle::Mat ref = oracle::dot_product_attention(
        oracle::from_tensor2(q), oracle::from_tensor2(k), oracle::from_tensor2(v), p);
    CHECK(oracle::max_abs_diff(ref, out) <= 1e-11);
  }
}

TEST_CASE("attention rejects mismatched shapes and head counts") {
  RngStream rng(8);
  AttentionParams p = random_attention(4, 4, 2, rng);
  CHECK_THROWS_AS(dot_product_attention(random_tensor({4, 3}, rng), random_tensor({4, 2}, rng),
                                        random_tensor({4, 3}, rng), p),
                  ShapeError);
  p.key_dim = 5;  // 5 not divisible by 2
  CHECK_THROWS_AS(dot_product_attention(random_tensor({5, 3}, rng), random_tensor({5, 3}, rng),
                                        random_tensor({4, 3}, rng), p),
                  ConfigError);
}

TEST_CASE("ffn cases") {
  SUBCASE("zero weights broadcast the output bias") {
    FfnParams p;
    p.w1 = Tensor({3, 2});
    p.b1 = Tensor({3}, {1, 2, 3});
    p.w2 = Tensor({2, 3});
    p.b2 = Tensor({2}, {0.5, -1.5});
    RngStream rng(9);
    Tensor out = ffn(random_tensor({2, 4}, rng), p);
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(out.at(0, j) == 0.5);
      CHECK(out.at(1, j) == -1.5);
    }
  }
  SUBCASE("zero input with zero first bias broadcasts the output bias") {
    RngStream rng(10);
    FfnParams p;
    p.w1 = random_tensor({3, 2}, rng);
    p.b1 = Tensor({3});
    p.w2 = random_tensor({2, 3}, rng);
    p.b2 = Tensor({2}, {4, 5});
    Tensor out = ffn(Tensor({2, 3}), p);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(out.at(0, j) == doctest::Approx(4.0));
      CHECK(out.at(1, j) == doctest::Approx(5.0));
    }
  }
  SUBCASE("identity maps with a shifting bias rectify one coordinate") {
    FfnParams p;
    p.w1 = Tensor({2, 2}, {1, 0, 0, 1});
    p.b1 = Tensor({2}, {-1, 0});
    p.w2 = Tensor({2, 2}, {1, 0, 0, 1});
    p.b2 = Tensor({2});
    Tensor out = ffn(Tensor({2, 1}, {2, -3}), p);
    CHECK(out.at(0, 0) == 1.0);
    CHECK(out.at(1, 0) == 0.0);
  }
}

TEST_CASE("blocks match the composition oracle") {
  RngStream rng(12);
  SUBCASE("intra on 3x4x1") {
    EncoderConfig cfg{3, 4, 1, 1, 1, 0, 0, 1e-5, 77};
    HassEncoderParams params = init_encoder(cfg);
    Tensor input = random_tensor({3, 4, 1}, rng);
    Tensor got = intra_channel_block(input, params.intra);
    CHECK(oracle::max_abs_diff(oracle::intra_block(input, params.intra), got) <= 1e-12);
  }
  SUBCASE("inter on 2x5x1") {
    EncoderConfig cfg{2, 5, 1, 1, 1, 0, 0, 1e-5, 78};
    HassEncoderParams params = init_encoder(cfg);
    Tensor input = random_tensor({2, 5, 1}, rng);
    Tensor got = inter_channel_block(input, params.inter);
    CHECK(oracle::max_abs_diff(oracle::inter_block(input, params.inter), got) <= 1e-12);
  }
  SUBCASE("full encode on random small instances") {
    for (int trial = 0; trial < 8; ++trial) {
      EncoderConfig cfg;
      cfg.channels = 1 + rng.index(4);
      cfg.timesteps = 1 + rng.index(6);
      cfg.heads_intra = 1;
      cfg.heads_inter = 1;
      cfg.seed = 100 + static_cast<std::uint64_t>(trial);
      HassEncoderParams params = init_encoder(cfg);
      Tensor input = random_tensor({cfg.channels, cfg.timesteps, 1}, rng);
      CHECK(oracle::max_abs_diff(oracle::encode(input, params), encode(input, params)) <= 1e-10);
    }
  }
}

TEST_CASE("single-channel intra block matches oracle and runs") {
  RngStream rng(13);
  EncoderConfig cfg{1, 6, 1, 1, 1, 0, 0, 1e-5, 14};
  HassEncoderParams params = init_encoder(cfg);
  Tensor input = random_tensor({1, 6, 1}, rng);
  Tensor got = intra_channel_block(input, params.intra);
  CHECK(oracle::max_abs_diff(oracle::intra_block(input, params.intra), got) <= 1e-12);
}

TEST_CASE("token permutation equivariance") {
  RngStream rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    EncoderConfig cfg;
    cfg.channels = 2 + rng.index(4);
    cfg.timesteps = 2 + rng.index(6);
    cfg.heads_intra = 1;
    cfg.heads_inter = 1;
    cfg.seed = 200 + static_cast<std::uint64_t>(trial);
    HassEncoderParams params = init_encoder(cfg);
    Tensor input = random_tensor({cfg.channels, cfg.timesteps, 1}, rng);

    const auto cperm = random_permutation(cfg.channels, rng);
    Tensor a = intra_channel_block(permute_channels(input, cperm), params.intra);
    Tensor b = permute_channels(intra_channel_block(input, params.intra), cperm);
    CHECK(oracle::max_abs_diff(a, b) <= 1e-9);

    const auto tperm = random_permutation(cfg.timesteps, rng);
    Tensor c = inter_channel_block(permute_time(input, tperm), params.inter);
    Tensor d = permute_time(inter_channel_block(input, params.inter), tperm);
    CHECK(oracle::max_abs_diff(c, d) <= 1e-9);
  }
}

TEST_CASE("residual paths carry the input when attention and ffn are zeroed") {
  RngStream rng(16);
  EncoderConfig cfg{3, 4, 1, 1, 1, 0, 0, 1e-5, 17};
  HassEncoderParams params = init_encoder(cfg);
  for_each_tensor(params, [](const std::string& name, Tensor& t) {
    if (name.find("attn.") != std::string::npos || name.find("ffn.") != std::string::npos) {
      t.fill(0.0);
    } else if (name.find("ln") != std::string::npos) {
      t.fill(name.find("gain") != std::string::npos ? 1.0 : 0.0);
    }
  });

  Tensor input = random_tensor({3, 4, 1}, rng);
  Tensor got = encode(input, params);

  // Closed form: token-wise layer norm twice per block on each orientation.
  auto ln_tokens_twice = [&](const oracle::Mat& tokens, double eps) {
    const std::size_t d = tokens.size();
    oracle::Vec gain(d, 1.0), bias(d, 0.0);
    return oracle::layer_norm_tokens(oracle::layer_norm_tokens(tokens, gain, bias, eps), gain,
                                     bias, eps);
  };
  Tensor after_intra =
      oracle::from_channel_tokens(ln_tokens_twice(oracle::channel_tokens(input), 1e-5), 3, 4, 1);
  Tensor expected =
      oracle::from_time_tokens(ln_tokens_twice(oracle::time_tokens(after_intra), 1e-5), 3, 4, 1);
  CHECK(oracle::max_abs_diff(expected, got) <= 1e-12);
}

TEST_CASE("encode preserves shape for every small configuration") {
  RngStream rng(18);
  for (std::size_t c = 1; c <= 6; ++c) {
    for (std::size_t t = 1; t <= 8; ++t) {
      EncoderConfig cfg;
      cfg.channels = c;
      cfg.timesteps = t;
      cfg.heads_intra = 1;
      cfg.heads_inter = 1;
      cfg.seed = c * 100 + t;
      HassEncoderParams params = init_encoder(cfg);
      Tensor input = random_tensor({c, t, 1}, rng);
      Tensor out = encode(input, params);
      CHECK(out.shape() == input.shape());
      CHECK(out.all_finite());
    }
  }
}

TEST_CASE("encode is deterministic") {
  RngStream rng(19);
  EncoderConfig cfg{4, 6, 1, 2, 2, 0, 0, 1e-5, 20};
  HassEncoderParams params = init_encoder(cfg);
  Tensor input = random_tensor({4, 6, 1}, rng);
  Tensor a = encode(input, params);
  Tensor b = encode(input, params);
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("encoder initialization") {
  SUBCASE("same seed is bitwise identical, biases zero, norms identity") {
    EncoderConfig cfg{6, 8, 1, 2, 2, 0, 0, 1e-5, 42};
    HassEncoderParams a = init_encoder(cfg);
    HassEncoderParams b = init_encoder(cfg);
    bool identical = true;
    std::size_t tensor_count = 0;
    for_each_tensor(a, [&](const std::string& name, const Tensor& ta) {
      ++tensor_count;
      for_each_tensor(b, [&](const std::string& name_b, const Tensor& tb) {
        if (name == name_b) {
          identical = identical && ta.same_shape(tb) &&
                      std::memcmp(ta.data(), tb.data(), ta.size() * sizeof(double)) == 0;
        }
      });
      if (name.find(".b") != std::string::npos) {
        // every bias (bq, bk, bv, bo, b1, b2, ln bias) starts at zero
        for (std::size_t i = 0; i < ta.size(); ++i) identical = identical && ta[i] == 0.0;
      }
    });
    CHECK(identical);
    CHECK(tensor_count == 2 * (2 * 6 + 2 + 4 + 4));
    for (const Tensor* g : {&a.intra.ln1.gain, &a.intra.ln2.gain, &a.inter.ln1.gain,
                            &a.inter.ln2.gain}) {
      for (std::size_t i = 0; i < g->size(); ++i) CHECK((*g)[i] == 1.0);
    }
  }
  SUBCASE("divisibility is validated per block") {
    EncoderConfig ok{6, 8, 1, 2, 3, 0, 0, 1e-5, 1};
    CHECK_NOTHROW(init_encoder(ok));  // inter dim 6 divisible by 3
    EncoderConfig bad{6, 8, 1, 2, 4, 0, 0, 1e-5, 1};
    CHECK_THROWS_WITH_AS(init_encoder(bad), doctest::Contains("4"), ConfigError);
  }
  SUBCASE("auto head count prefers two when divisible") {
    EncoderConfig cfg{5, 6, 1, 0, 0, 0, 0, 1e-5, 3};
    HassEncoderParams p = init_encoder(cfg);
    CHECK(p.intra.attn.head_count == 2);  // T*D = 6
    CHECK(p.inter.attn.head_count == 1);  // C*D = 5
  }
}

TEST_CASE("attention row stochasticity over randomized invocations") {
  RngStream rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.index(2);
    const std::size_t d_k = m * (1 + rng.index(4));
    const std::size_t d_v = m * (1 + rng.index(4));
    const std::size_t n = 1 + rng.index(8);
    AttentionParams p = random_attention(d_k, d_v, m, rng);
    std::vector<Tensor> attn;
    dot_product_attention(random_tensor({d_k, n}, rng), random_tensor({d_k, n}, rng),
                          random_tensor({d_v, n}, rng), p, attn);
    REQUIRE(attn.size() == m);
    for (const Tensor& a : attn) {
      for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          sum += a.at(i, j);
          CHECK(a.at(i, j) > 0.0);
          CHECK(a.at(i, j) < 1.0 + 1e-15);
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
      }
    }
  }
}

TEST_CASE("parameter serialization round trip") {
  EncoderConfig cfg{3, 4, 1, 2, 1, 0, 0, 1e-5, 33};
  HassEncoderParams params = init_encoder(cfg);
  NamedTensors tensors;
  for_each_tensor(params, [&](const std::string& name, const Tensor& t) {
    tensors.emplace_back(name, t);
  });

  const std::vector<std::uint8_t> bytes = serialize_params(tensors);
  NamedTensors loaded = deserialize_params(bytes);
  REQUIRE(loaded.size() == tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    CHECK(loaded[i].first == tensors[i].first);
    CHECK(loaded[i].second.shape() == tensors[i].second.shape());
    for (std::size_t j = 0; j < loaded[i].second.size(); ++j) {
      // narrowed once on write, promoted on read
      CHECK(loaded[i].second[j] == static_cast<double>(static_cast<float>(tensors[i].second[j])));
    }
  }
  CHECK(serialize_params(loaded) == bytes);
}

TEST_CASE("parameter loader rejects malformed byte streams") {
  CHECK_THROWS_AS(deserialize_params({}), ParamsError);
  CHECK_THROWS_AS(deserialize_params({'H', 'A', 'S', 'S'}), ParamsError);

  NamedTensors one;
  one.emplace_back("w", Tensor({2, 2}, {1, 2, 3, 4}));
  std::vector<std::uint8_t> good = serialize_params(one);

  std::vector<std::uint8_t> truncated(good.begin(), good.end() - 3);
  CHECK_THROWS_AS(deserialize_params(truncated), ParamsError);

  std::vector<std::uint8_t> trailing = good;
  trailing.push_back(0);
  CHECK_THROWS_AS(deserialize_params(trailing), ParamsError);

  std::vector<std::uint8_t> bad_version = good;
  bad_version[7] = 99;
  CHECK_THROWS_AS(deserialize_params(bad_version), ParamsError);

  RngStream rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::uint8_t> junk(rng.index(64));
    for (auto& b : junk) b = static_cast<std::uint8_t>(rng.index(256));
    try {
      deserialize_params(junk);
    } catch (const ParamsError&) {
    }
  }
}
