#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "core/blob.hpp"
#include "core/ops.hpp"
#include "nn/layers.hpp"
#include "nn/optim.hpp"
#include "testutil.hpp"

using namespace dfkd;
using testutil::check_gradients;
using testutil::kink_safe_random;
using testutil::normal_random;

namespace {
constexpr double kGradTol = 2e-5;

Var scalarize(const Var& v) {
    // Weighted sum with fixed irrational-ish weights so every output
    // coordinate influences the check differently.
    Tensor w(v->value.shape());
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = 0.3 + 0.137 * static_cast<double>(i % 17);
    int64_t n = v->value.numel();
    Var flat = ops::reshape(v, {1, static_cast<int>(n)});
    Tensor w2 = Tensor::from_vector({1, static_cast<int>(n)}, w.vec());
    return ops::dot_const(ops::reshape(flat, {static_cast<int>(n)}), w2);
}
} // namespace

TEST_CASE("rng: deterministic, serializable, sane normals") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());

    Rng c(7);
    for (int i = 0; i < 37; ++i) c.normal(); // odd count leaves a cached spare
    std::ostringstream os;
    c.save(os);
    Rng d;
    std::istringstream is(os.str());
    d.load(is);
    for (int i = 0; i < 50; ++i) CHECK(c.normal() == d.normal());

    Rng e(123);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double x = e.normal();
        sum += x;
        sq += x * x;
    }
    double mean = sum / n;
    double var = sq / n - mean * mean;
    CHECK(std::fabs(mean) < 0.03);
    CHECK(std::fabs(var - 1.0) < 0.05);

    Rng f(9);
    int counts[4] = {0, 0, 0, 0};
    for (int i = 0; i < 4000; ++i) counts[f.uniform_int(4)]++;
    for (int k = 0; k < 4; ++k) CHECK(counts[k] > 800);
}

TEST_CASE("ops: elementwise gradients") {
    Rng rng(1);
    auto one = [&](const char* name, const testutil::BuildFn& f, Tensor in) {
        auto r = check_gradients(f, {in});
        INFO(name << ": " << r.worst);
        CHECK(r.max_rel_err < kGradTol);
    };
    one("relu", [](const std::vector<Var>& v) { return scalarize(ops::relu(v[0])); },
        kink_safe_random(rng, {2, 3}));
    one("leaky_relu", [](const std::vector<Var>& v) { return scalarize(ops::leaky_relu(v[0], 0.2)); },
        kink_safe_random(rng, {2, 3}));
    one("tanh", [](const std::vector<Var>& v) { return scalarize(ops::tanh_val(v[0])); },
        normal_random(rng, {2, 3}));
    one("abs", [](const std::vector<Var>& v) { return scalarize(ops::abs_val(v[0])); },
        kink_safe_random(rng, {2, 3}));
    one("exp", [](const std::vector<Var>& v) { return scalarize(ops::exp_val(v[0])); },
        normal_random(rng, {2, 3}, 0.5));
    Tensor pos({2, 3});
    rng.fill_uniform(pos, 0.5, 2.0);
    one("sqrt", [](const std::vector<Var>& v) { return scalarize(ops::sqrt_val(v[0])); }, pos);
    one("scale", [](const std::vector<Var>& v) { return scalarize(ops::scale(v[0], -2.5)); },
        normal_random(rng, {2, 3}));
    one("mean_all", [](const std::vector<Var>& v) { return ops::mean_all(v[0]); },
        normal_random(rng, {3, 4}));
    one("l2_norm", [](const std::vector<Var>& v) { return ops::l2_norm(v[0]); },
        kink_safe_random(rng, {5}));

    auto two = check_gradients(
        [](const std::vector<Var>& v) {
            return scalarize(ops::mul(ops::add(v[0], v[1]), ops::sub(v[0], v[1])));
        },
        {normal_random(rng, {2, 3}), normal_random(rng, {2, 3})});
    INFO(two.worst);
    CHECK(two.max_rel_err < kGradTol);

    auto avg = check_gradients(
        [](const std::vector<Var>& v) { return scalarize(ops::average_list({v[0], v[1], v[2]})); },
        {normal_random(rng, {2, 2}), normal_random(rng, {2, 2}), normal_random(rng, {2, 2})});
    CHECK(avg.max_rel_err < kGradTol);
}

TEST_CASE("ops: shape gradients") {
    Rng rng(2);
    auto r1 = check_gradients(
        [](const std::vector<Var>& v) { return scalarize(ops::reshape(v[0], {6, 2})); },
        {normal_random(rng, {3, 4})});
    CHECK(r1.max_rel_err < kGradTol);

    auto r2 = check_gradients(
        [](const std::vector<Var>& v) { return scalarize(ops::concat_channels(v[0], v[1])); },
        {normal_random(rng, {2, 2, 3, 3}), normal_random(rng, {2, 3, 3, 3})});
    CHECK(r2.max_rel_err < kGradTol);

    auto r3 = check_gradients(
        [](const std::vector<Var>& v) { return scalarize(ops::upsample_nearest2(v[0])); },
        {normal_random(rng, {2, 2, 3, 3})});
    CHECK(r3.max_rel_err < kGradTol);

    auto r4 = check_gradients(
        [](const std::vector<Var>& v) { return ops::select_item(v[0], 5); },
        {normal_random(rng, {3, 4})});
    CHECK(r4.max_rel_err < kGradTol);

    // upsample value: each source pixel appears in a 2x2 block
    Tensor x = Tensor::from_vector({1, 1, 2, 2}, {1, 2, 3, 4});
    Var up = ops::upsample_nearest2(make_input(x, false));
    CHECK(up->value.at(0, 0, 0, 0) == 1.0);
    CHECK(up->value.at(0, 0, 0, 1) == 1.0);
    CHECK(up->value.at(0, 0, 1, 1) == 1.0);
    CHECK(up->value.at(0, 0, 2, 3) == 4.0);
    CHECK(up->value.at(0, 0, 3, 3) == 4.0);
}

TEST_CASE("ops: linear and conv gradients") {
    Rng rng(3);
    auto lin = check_gradients(
        [](const std::vector<Var>& v) { return scalarize(ops::linear(v[0], v[1], v[2])); },
        {normal_random(rng, {3, 4}), normal_random(rng, {2, 4}), normal_random(rng, {2})});
    INFO(lin.worst);
    CHECK(lin.max_rel_err < kGradTol);

    auto conv = check_gradients(
        [](const std::vector<Var>& v) { return scalarize(ops::conv2d(v[0], v[1], v[2], 2, 1, 1)); },
        {normal_random(rng, {2, 3, 5, 5}), normal_random(rng, {4, 3, 3, 3}), normal_random(rng, {4})});
    INFO(conv.worst);
    CHECK(conv.max_rel_err < kGradTol);

    auto dw = check_gradients(
        [](const std::vector<Var>& v) { return scalarize(ops::conv2d(v[0], v[1], nullptr, 1, 1, 4)); },
        {normal_random(rng, {2, 4, 4, 4}), normal_random(rng, {4, 1, 3, 3})});
    INFO(dw.worst);
    CHECK(dw.max_rel_err < kGradTol);

    auto dws = check_gradients(
        [](const std::vector<Var>& v) { return scalarize(ops::conv2d(v[0], v[1], nullptr, 2, 1, 3)); },
        {normal_random(rng, {1, 3, 5, 5}), normal_random(rng, {3, 1, 3, 3})});
    CHECK(dws.max_rel_err < kGradTol);

    auto ct = check_gradients(
        [](const std::vector<Var>& v) { return scalarize(ops::conv_transpose2d(v[0], v[1], v[2], 2, 1)); },
        {normal_random(rng, {2, 3, 3, 3}), normal_random(rng, {3, 2, 4, 4}), normal_random(rng, {2})});
    INFO(ct.worst);
    CHECK(ct.max_rel_err < kGradTol);

    // conv_transpose k4 s2 p1 exactly doubles spatial size
    Var y = ops::conv_transpose2d(make_input(normal_random(rng, {1, 2, 8, 8}), false),
                                  make_input(normal_random(rng, {2, 3, 4, 4}), false), nullptr, 2, 1);
    CHECK(y->value.shape() == std::vector<int>{1, 3, 16, 16});

    auto gap = check_gradients(
        [](const std::vector<Var>& v) { return scalarize(ops::global_avg_pool(v[0])); },
        {normal_random(rng, {2, 3, 4, 4})});
    CHECK(gap.max_rel_err < kGradTol);
}

TEST_CASE("ops: conv2d matches direct computation") {
    Rng rng(17);
    Tensor x = normal_random(rng, {2, 3, 6, 6});
    Tensor w = normal_random(rng, {4, 3, 3, 3});
    int stride = 2, pad = 1;
    Var y = ops::conv2d(make_input(x, false), make_input(w, false), nullptr, stride, pad, 1);
    REQUIRE(y->value.shape() == std::vector<int>{2, 4, 3, 3});
    for (int b = 0; b < 2; ++b)
        for (int oc = 0; oc < 4; ++oc)
            for (int oh = 0; oh < 3; ++oh)
                for (int ow = 0; ow < 3; ++ow) {
                    double acc = 0.0;
                    for (int ic = 0; ic < 3; ++ic)
                        for (int ki = 0; ki < 3; ++ki)
                            for (int kj = 0; kj < 3; ++kj) {
                                int ih = oh * stride - pad + ki;
                                int iw = ow * stride - pad + kj;
                                if (ih < 0 || ih >= 6 || iw < 0 || iw >= 6) continue;
                                acc += x.at(b, ic, ih, iw) * w.at(oc, ic, ki, kj);
                            }
                    CHECK(y->value.at(b, oc, oh, ow) == doctest::Approx(acc).epsilon(1e-12));
                }
}

TEST_CASE("ops: batchnorm gradients and statistics") {
    Rng rng(4);
    auto bt = check_gradients(
        [](const std::vector<Var>& v) {
            return scalarize(ops::batchnorm_train(v[0], v[1], v[2], 1e-5, nullptr, nullptr));
        },
        {normal_random(rng, {3, 2, 3, 3}), kink_safe_random(rng, {2}, 0.5, 1.5), normal_random(rng, {2})});
    INFO(bt.worst);
    CHECK(bt.max_rel_err < 1e-4);

    auto bt_plain = check_gradients(
        [](const std::vector<Var>& v) {
            return scalarize(ops::batchnorm_train(v[0], nullptr, nullptr, 1e-5, nullptr, nullptr));
        },
        {normal_random(rng, {2, 3, 2, 2})});
    CHECK(bt_plain.max_rel_err < 1e-4);

    Tensor rm = normal_random(rng, {2}, 0.3);
    Tensor rv = kink_safe_random(rng, {2}, 0.5, 1.5);
    for (int64_t i = 0; i < rv.numel(); ++i) rv[i] = std::fabs(rv[i]);
    auto be = check_gradients(
        [&](const std::vector<Var>& v) {
            return scalarize(ops::batchnorm_eval(v[0], v[1], v[2], rm, rv, 1e-5));
        },
        {normal_random(rng, {3, 2, 3, 3}), kink_safe_random(rng, {2}, 0.5, 1.5), normal_random(rng, {2})});
    CHECK(be.max_rel_err < kGradTol);

    // batch statistic graph values: mean/sigma of a known batch
    Tensor x = Tensor::from_vector({2, 1, 1, 1}, {0.0, 2.0});
    Var xv = make_input(x, false);
    Var mu = ops::channel_mean(xv);
    Var sig = ops::sqrt_val(ops::channel_var_biased(xv, mu));
    CHECK(mu->value[0] == doctest::Approx(1.0));
    CHECK(sig->value[0] == doctest::Approx(1.0)); // biased: sqrt(((0-1)^2+(2-1)^2)/2)

    // constant batch: sigma exactly 0, gradient defined as 0
    Tensor xc({2, 1, 2, 2}, 3.5);
    Var xcv = make_input(xc, true);
    Var muc = ops::channel_mean(xcv);
    Var sc = ops::sqrt_val(ops::channel_var_biased(xcv, muc));
    CHECK(sc->value[0] == 0.0);
    Tape tape;
    tape.backward(ops::mean_all(sc));
    for (int64_t i = 0; i < xcv->grad.numel(); ++i) CHECK(xcv->grad[i] == 0.0);

    auto stats = check_gradients(
        [](const std::vector<Var>& v) {
            Var m = ops::channel_mean(v[0]);
            Var s = ops::sqrt_val(ops::channel_var_biased(v[0], m));
            return ops::add(ops::l2_norm(m), ops::l2_norm(s));
        },
        {normal_random(rng, {2, 3, 3, 3})});
    INFO(stats.worst);
    CHECK(stats.max_rel_err < 1e-4);
}

TEST_CASE("ops: softmax family gradients and values") {
    Rng rng(5);
    auto sm = check_gradients(
        [](const std::vector<Var>& v) { return scalarize(ops::softmax_rows(v[0])); },
        {normal_random(rng, {3, 4})});
    CHECK(sm.max_rel_err < kGradTol);

    auto lsm = check_gradients(
        [](const std::vector<Var>& v) { return scalarize(ops::log_softmax_rows(v[0])); },
        {normal_random(rng, {3, 4})});
    CHECK(lsm.max_rel_err < kGradTol);

    std::vector<int> labels = {2, 0, 3};
    auto ce = check_gradients(
        [&](const std::vector<Var>& v) { return ops::mean_all(ops::cross_entropy_vec(v[0], labels)); },
        {normal_random(rng, {3, 4})});
    INFO(ce.worst);
    CHECK(ce.max_rel_err < kGradTol);

    // uniform logits: softmax rows are uniform, CE is log(C)
    Tensor z({2, 4}, 0.0);
    Var soft = ops::softmax_rows(make_input(z, false));
    for (int64_t i = 0; i < soft->value.numel(); ++i) CHECK(soft->value[i] == doctest::Approx(0.25));
    Var cev = ops::cross_entropy_vec(make_input(z, false), {1, 3});
    CHECK(cev->value[0] == doctest::Approx(std::log(4.0)));

    auto sr = check_gradients(
        [](const std::vector<Var>& v) { return scalarize(ops::sum_rows(v[0])); },
        {normal_random(rng, {3, 4})});
    CHECK(sr.max_rel_err < kGradTol);
}

TEST_CASE("ops: attention primitive gradients") {
    Rng rng(6);
    auto sc = check_gradients(
        [](const std::vector<Var>& v) { return scalarize(ops::attention_scores(v[0], v[1], 0.5)); },
        {normal_random(rng, {2, 3, 4}), normal_random(rng, {4})});
    CHECK(sc.max_rel_err < kGradTol);

    auto cmb = check_gradients(
        [](const std::vector<Var>& v) { return scalarize(ops::attention_combine(v[0], v[1])); },
        {normal_random(rng, {2, 3}), normal_random(rng, {2, 3, 5})});
    CHECK(cmb.max_rel_err < kGradTol);
}

TEST_CASE("graph: no-grad subgraphs are skipped, grads accumulate") {
    Tensor a({2, 2}, 1.0), b({2, 2}, 2.0);
    Var va = make_input(a, true);
    Var vb = make_input(b, false);
    Var used_twice = ops::add(va, vb);
    Var root = ops::mean_all(ops::add(used_twice, used_twice));
    Tape tape;
    tape.backward(root);
    CHECK(va->has_grad());
    CHECK(!vb->has_grad());
    for (int64_t i = 0; i < 4; ++i) CHECK(va->grad[i] == doctest::Approx(0.5)); // 2 paths * 1/4
}

TEST_CASE("tape: parameter leaves flush into Parameter::grad") {
    Parameter p(Tensor({3}, 2.0));
    Tape tape;
    Var leaf = tape.leaf(p);
    Var root = ops::mean_all(ops::mul(leaf, leaf));
    tape.backward(root);
    for (int i = 0; i < 3; ++i) CHECK(p.grad[i] == doctest::Approx(2.0 * 2.0 / 3.0));

    p.trainable = false;
    p.zero_grad();
    Tape tape2;
    Var leaf2 = tape2.leaf(p);
    Var root2 = ops::mean_all(leaf2);
    tape2.backward(root2);
    for (int i = 0; i < 3; ++i) CHECK(p.grad[i] == 0.0);
}

TEST_CASE("blob: round trip is exact, tamper is detected") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "dfkd_blob_test";
    fs::create_directories(dir);
    std::string path = (dir / "state.bin").string();

    Rng rng(8);
    Tensor a = normal_random(rng, {3, 4});
    Tensor b = normal_random(rng, {2, 2, 2, 2});
    BlobWriter w;
    w.add("alpha", a);
    w.add("beta", b);
    w.write(path);

    auto got = blob_read(path);
    REQUIRE(got.size() == 2);
    CHECK(got.at("alpha").vec() == a.vec());
    CHECK(got.at("beta").vec() == b.vec());

    // flip one byte in the payload
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(40);
        char c;
        f.seekg(40);
        f.get(c);
        f.seekp(40);
        c = static_cast<char>(c ^ 0x01);
        f.put(c);
    }
    CHECK_THROWS_WITH_AS(blob_read(path), doctest::Contains("checksum"), std::runtime_error);
    fs::remove_all(dir);
}

TEST_CASE("optim: sgd with momentum and weight decay matches hand computation") {
    Parameter p(Tensor({1}, 1.0));
    std::vector<Parameter*> ps = {&p};
    nn::Sgd opt(ps, 0.1, 0.9, 0.5);
    // gradient fixed at 1.0
    p.grad[0] = 1.0;
    opt.step();
    // g' = 1 + 0.5*1 = 1.5; v = 1.5; w = 1 - 0.15 = 0.85
    CHECK(p.value[0] == doctest::Approx(0.85));
    p.grad[0] = 1.0;
    opt.step();
    // g' = 1 + 0.5*0.85 = 1.425; v = 0.9*1.5 + 1.425 = 2.775; w = 0.85 - 0.2775
    CHECK(p.value[0] == doctest::Approx(0.5725));
    CHECK(p.version == 2);
}

TEST_CASE("optim: adam matches hand computation") {
    Parameter p(Tensor({1}, 0.0));
    std::vector<Parameter*> ps = {&p};
    nn::Adam opt(ps, 0.001, 0.9, 0.999, 1e-8, 0.0, false);
    p.grad[0] = 2.0;
    opt.step();
    // mhat = 2, vhat = 4; step = lr * 2 / (2 + eps) ~= lr
    CHECK(p.value[0] == doctest::Approx(-0.001).epsilon(1e-6));
    p.grad[0] = 2.0;
    opt.step();
    CHECK(p.value[0] == doctest::Approx(-0.002).epsilon(1e-5));
}

TEST_CASE("optim: state save and load preserves trajectory") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "dfkd_opt_test";
    fs::create_directories(dir);
    std::string path = (dir / "opt.bin").string();

    auto run_steps = [](nn::Adam& opt, Parameter& p, int n, double g0) {
        for (int i = 0; i < n; ++i) {
            p.grad[0] = g0 + 0.1 * i;
            opt.step();
        }
    };

    Parameter p1(Tensor({1}, 1.0));
    p1.name = "p";
    std::vector<Parameter*> ps1 = {&p1};
    nn::Adam a(ps1, 0.01, 0.9, 0.999, 1e-8, 0.01, false);
    run_steps(a, p1, 3, 0.5);

    BlobWriter w;
    a.save(w, "adam");
    w.write(path);
    double w_mid = p1.value[0];

    run_steps(a, p1, 3, 0.9); // continue original

    Parameter p2(Tensor({1}, w_mid));
    p2.name = "p";
    std::vector<Parameter*> ps2 = {&p2};
    nn::Adam b(ps2, 0.01, 0.9, 0.999, 1e-8, 0.01, false);
    b.load(blob_read(path), "adam");
    run_steps(b, p2, 3, 0.9); // resumed copy

    CHECK(p2.value[0] == doctest::Approx(p1.value[0]).epsilon(1e-15));
    fs::remove_all(dir);
}

TEST_CASE("layers: module registry, state io, freeze guard") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "dfkd_layer_test";
    fs::create_directories(dir);

    struct TinyNet : nn::Module {
        nn::Conv2d conv{3, 4, 3, 1, 1, false};
        nn::BatchNorm2d bn{4};
        nn::Linear fc{4, 2};
        void collect(nn::Registry& r, const std::string& prefix) override {
            conv.collect(r, nn::join_name(prefix, "conv"));
            bn.collect(r, nn::join_name(prefix, "bn"));
            fc.collect(r, nn::join_name(prefix, "fc"));
        }
        void set_training(bool on) override { bn.set_training(on); }
    };

    TinyNet net;
    Rng rng(11);
    net.conv.init_kaiming(rng);
    net.fc.init_kaiming(rng);
    CHECK(net.param_count() == 3 * 4 * 9 + 4 + 4 + 2 * 4 + 2);

    // forward in train mode moves running stats
    Tensor x = normal_random(rng, {2, 3, 5, 5});
    Tape tape;
    Var y = net.fc.forward(tape, ops::global_avg_pool(net.bn.forward(tape, net.conv.forward(tape, make_input(x, false)))));
    CHECK(y->value.shape() == std::vector<int>{2, 2});
    bool moved = false;
    for (int c = 0; c < 4; ++c)
        if (net.bn.running_mean[c] != 0.0) moved = true;
    CHECK(moved);

    uint64_t h1 = net.state_hash();
    std::string path = (dir / "net.bin").string();
    net.save_state(path);

    TinyNet other;
    other.load_state(path);
    CHECK(other.state_hash() == h1);

    {
        nn::FreezeGuard guard(net);
        for (Parameter* p : net.parameters()) CHECK(!p->trainable);
    }
    for (Parameter* p : net.parameters()) CHECK(p->trainable);
    fs::remove_all(dir);
}

TEST_CASE("layers: batchnorm eval vs train and observation") {
    Rng rng(12);
    nn::BatchNorm2d bn(3);
    Tensor x = normal_random(rng, {4, 3, 2, 2});

    bn.set_training(true);
    Tape t1;
    (void)bn.forward(t1, make_input(x, false));
    Tensor rm = bn.running_mean, rv = bn.running_var;

    bn.set_training(false);
    Tape t2;
    nn::BnObservation obs;
    Var y = bn.forward_observe(t2, make_input(x, false), &obs);
    CHECK(y->value.shape() == x.shape());
    CHECK(obs.mean_stored.vec() == rm.vec());
    for (int c = 0; c < 3; ++c) CHECK(obs.sigma_stored[c] == doctest::Approx(std::sqrt(rv[c])));

    // eval forward leaves running stats alone
    Tape t3;
    (void)bn.forward(t3, make_input(x, false));
    CHECK(bn.running_mean.vec() == rm.vec());
    CHECK(bn.running_var.vec() == rv.vec());
}
