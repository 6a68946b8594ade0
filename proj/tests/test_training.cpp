#include <doctest.h>

#include <cmath>
#include <vector>

#include "gladder/cache.hpp"
#include "gladder/synthetic.hpp"
#include "gladder/training.hpp"
#include "test_helpers.hpp"

using namespace gladder;

namespace {

ToyTransformerConfig enc_cfg() {
    ToyTransformerConfig cfg;
    cfg.vocab_size = 128;
    cfg.num_layers = 2;
    cfg.model_dim = 8;
    cfg.heads = 2;
    cfg.max_tokens = 8;
    cfg.init_seed = 5;
    return cfg;
}

SideNetConfig side_cfg(std::size_t classes) {
    SideNetConfig cfg;
    cfg.backbone_layers = 2;
    cfg.backbone_dim = 8;
    cfg.schedule = {0, 1, 2};
    cfg.hidden = 8;
    cfg.num_classes = classes;
    cfg.dropout = 0.5;
    cfg.init_seed = 13;
    return cfg;
}

SamplerConfig khop_cfg() {
    SamplerConfig cfg;
    cfg.kind = SamplerKind::KHop;
    cfg.hops = 1;
    cfg.max_nodes = 8;
    return cfg;
}

}  // namespace

TEST_CASE("cross entropy of uniform logits is log C") {
    CHECK(cross_entropy({0, 0, 0}, 0) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(cross_entropy({0, 0, 0}, 2) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy saturates to zero for a confident correct class") {
    CHECK(cross_entropy({1000, 0, 0}, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::isfinite(cross_entropy({1000, 0, 0}, 1)));  // stable despite the big logit
}

TEST_CASE("cross entropy agrees with a direct evaluation") {
    CHECK(cross_entropy({1, 2, 3}, 2) == doctest::Approx(0.40761).epsilon(1e-4));
    CHECK_THROWS_AS(cross_entropy({1, 2}, 5), ValidationError);
}

TEST_CASE("adamw first step moves by about minus lr") {
    ParamStore store;
    int theta = store.add("theta", Matrix(1, 1, 1.0));
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.weight_decay = 0.0;
    AdamW opt(store, cfg);
    store[theta].grad.data[0] = 1.0;
    opt.step(store);
    CHECK(store[theta].value.data[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("adamw leaves parameters alone with zero gradient and no decay") {
    ParamStore store;
    int theta = store.add("theta", Matrix(2, 2, 0.37));
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.weight_decay = 0.0;
    AdamW opt(store, cfg);
    opt.step(store);
    for (double v : store[theta].value.data) CHECK(v == 0.37);
}

TEST_CASE("adamw weight decay is decoupled") {
    ParamStore store;
    int theta = store.add("theta", Matrix(1, 1, 2.0));
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.weight_decay = 0.5;
    AdamW opt(store, cfg);
    opt.step(store);  // g = 0: theta <- theta * (1 - lr * wd)
    CHECK(store[theta].value.data[0] == doctest::Approx(2.0 * 0.95).epsilon(1e-12));
}

TEST_CASE("adamw moments persist across steps") {
    ParamStore store;
    int theta = store.add("theta", Matrix(1, 1, 0.0));
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.weight_decay = 0.0;
    AdamW opt(store, cfg);
    store[theta].grad.data[0] = 1.0;
    opt.step(store);
    double after_one = store[theta].value.data[0];
    store[theta].grad.data[0] = -1.0;  // reversed gradient fights the momentum
    opt.step(store);
    CHECK(store[theta].value.data[0] != doctest::Approx(2.0 * after_one));
    CHECK(opt.steps_taken() == 2);
}

TEST_CASE("adamw aborts on non-finite gradients naming the parameter") {
    ParamStore store;
    store.add("fine", Matrix(1, 1, 0.0));
    int bad = store.add("exploded", Matrix(1, 1, 0.0));
    TrainConfig cfg;
    AdamW opt(store, cfg);
    store[bad].grad.data[0] = std::nan("");
    CHECK_THROWS_WITH_AS(opt.step(store), doctest::Contains("exploded"), RuntimeFailure);
}

TEST_CASE("one epoch takes one optimizer step per training target") {
    TextualGraph g = make_separable_fixture();  // 2 train nodes
    ToyTransformer enc(enc_cfg());
    EmbeddingCache cache = precompute_cache(enc, g, {0, 1, 2});
    CacheProvider provider(cache);
    GLadderStack stack(side_cfg(g.num_classes));
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.seed = 3;
    TrainResult res = train(g, provider, stack, khop_cfg(), cfg);
    CHECK(res.optimizer_steps == g.split_nodes(Split::Train).size());
    CHECK(res.step_losses.size() == res.optimizer_steps);
}

TEST_CASE("gradient accumulation groups targets per optimizer step") {
    TextualGraph g = make_homophilous_graph({.num_nodes = 20, .num_classes = 2, .seed = 4});
    ToyTransformer enc(enc_cfg());
    EmbeddingCache cache = precompute_cache(enc, g, {0, 1, 2});
    CacheProvider provider(cache);
    GLadderStack stack(side_cfg(g.num_classes));
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.grad_accum = 3;
    cfg.seed = 3;
    TrainResult res = train(g, provider, stack, khop_cfg(), cfg);
    std::size_t targets = g.split_nodes(Split::Train).size();
    CHECK(res.optimizer_steps == (targets + 2) / 3);
}

TEST_CASE("cached and live training produce identical trajectories") {
    TextualGraph g = make_homophilous_graph({.num_nodes = 24, .num_classes = 2, .seed = 9});
    ToyTransformer enc(enc_cfg());
    EmbeddingCache cache = precompute_cache(enc, g, {0, 1, 2});

    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.early_stop_patience = 100;
    cfg.seed = 11;

    CacheProvider cached(cache);
    GLadderStack stack_a(side_cfg(g.num_classes));
    TrainResult ra = train(g, cached, stack_a, khop_cfg(), cfg);

    LiveProvider live(enc, g);
    GLadderStack stack_b(side_cfg(g.num_classes));
    TrainResult rb = train(g, live, stack_b, khop_cfg(), cfg);

    REQUIRE(ra.step_losses.size() == rb.step_losses.size());
    for (std::size_t i = 0; i < ra.step_losses.size(); ++i) {
        CHECK(std::abs(ra.step_losses[i] - rb.step_losses[i]) < 1e-6);
    }
    for (std::size_t p = 0; p < stack_a.params().size(); ++p) {
        const Matrix& va = stack_a.params()[static_cast<int>(p)].value;
        const Matrix& vb = stack_b.params()[static_cast<int>(p)].value;
        CHECK(max_abs_diff(va, vb) < 1e-6);
    }
}

TEST_CASE("training is deterministic given the seed") {
    TextualGraph g = make_separable_fixture();
    ToyTransformer enc(enc_cfg());
    EmbeddingCache cache = precompute_cache(enc, g, {0, 1, 2});
    auto run = [&]() {
        CacheProvider provider(cache);
        GLadderStack stack(side_cfg(g.num_classes));
        TrainConfig cfg;
        cfg.epochs = 4;
        cfg.seed = 21;
        return train(g, provider, stack, khop_cfg(), cfg).step_losses;
    };
    CHECK(run() == run());
}

TEST_CASE("the separable fixture is memorized perfectly") {
    TextualGraph g = make_separable_fixture();
    ToyTransformer enc(enc_cfg());
    EmbeddingCache cache = precompute_cache(enc, g, {0, 1, 2});
    CacheProvider provider(cache);
    GLadderStack stack(side_cfg(g.num_classes));
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.learning_rate = 0.02;
    cfg.seed = 2;
    TrainResult res = train(g, provider, stack, khop_cfg(), cfg);
    CHECK(res.final_test_acc == 1.0);
    CHECK(res.final_val_acc == 1.0);
}

TEST_CASE("training loss trends down on the separable fixture") {
    TextualGraph g = make_separable_fixture();
    ToyTransformer enc(enc_cfg());
    EmbeddingCache cache = precompute_cache(enc, g, {0, 1, 2});
    CacheProvider provider(cache);
    SideNetConfig side = side_cfg(g.num_classes);
    side.dropout = 0.0;  // deterministic trend
    GLadderStack stack(side);
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.learning_rate = 0.02;
    cfg.early_stop_patience = 100;
    cfg.seed = 6;
    TrainResult res = train(g, provider, stack, khop_cfg(), cfg);
    REQUIRE(res.reports.size() == 10);
    int violations = 0;
    for (std::size_t e = 1; e < res.reports.size(); ++e) {
        if (res.reports[e].train_loss > res.reports[e - 1].train_loss) ++violations;
    }
    CHECK(violations <= 1);
}

TEST_CASE("early stopping restores the best checkpoint") {
    TextualGraph g = make_separable_fixture();
    ToyTransformer enc(enc_cfg());
    EmbeddingCache cache = precompute_cache(enc, g, {0, 1, 2});
    CacheProvider provider(cache);
    GLadderStack stack(side_cfg(g.num_classes));
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.learning_rate = 1e-9;  // nothing improves: stop after patience epochs
    cfg.early_stop_patience = 3;
    cfg.seed = 8;
    TrainResult res = train(g, provider, stack, khop_cfg(), cfg);
    CHECK(res.epochs_run == 4);  // epoch 0 sets the best, then 3 stale epochs
    CHECK(res.best_epoch == 0);
    CHECK(res.final_val_acc == res.best_val_acc);
}

TEST_CASE("detached exit heads never change final predictions") {
    TextualGraph g = make_homophilous_graph({.num_nodes = 20, .num_classes = 2, .seed = 14});
    ToyTransformer enc(enc_cfg());
    EmbeddingCache cache = precompute_cache(enc, g, {0, 1, 2});

    auto run = [&](double exit_weight) {
        CacheProvider provider(cache);
        SideNetConfig side = side_cfg(g.num_classes);
        side.exit_heads_detached = true;
        side.exit_loss_weight = exit_weight;
        GLadderStack stack(side);
        TrainConfig cfg;
        cfg.epochs = 3;
        cfg.early_stop_patience = 100;
        cfg.seed = 17;
        train(g, provider, stack, khop_cfg(), cfg);
        // final logits for every node, bit for bit
        std::vector<double> logits;
        SamplerConfig scfg = eval_sampler_config(khop_cfg());
        for (NodeId v = 0; v < g.num_nodes; ++v) {
            Subgraph sub = sample_subgraph(g, v, scfg);
            Tape tape(stack.params());
            auto fr = stack.forward(tape, provider, sub);
            const Matrix& row = tape.value(fr.final_logits);
            for (std::size_t c = 0; c < row.cols; ++c) logits.push_back(row.at(0, c));
        }
        return logits;
    };
    CHECK(run(1.0) == run(0.0));
}

TEST_CASE("the backbone is bit-identical before and after training") {
    TextualGraph g = make_separable_fixture();
    ToyTransformer enc(enc_cfg());
    auto before = enc.serialize_weights();
    LiveProvider provider(enc, g);
    GLadderStack stack(side_cfg(g.num_classes));
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 23;
    train(g, provider, stack, khop_cfg(), cfg);
    CHECK(enc.serialize_weights() == before);
}

TEST_CASE("evaluate of a constant classifier is the class frequency") {
    TextualGraph g = make_homophilous_graph({.num_nodes = 30, .num_classes = 3, .seed = 33});
    ToyTransformer enc(enc_cfg());
    EmbeddingCache cache = precompute_cache(enc, g, {0, 1, 2});
    CacheProvider provider(cache);
    SideNetConfig side = side_cfg(g.num_classes);
    GLadderStack stack(side);
    // constant predictor: zero weights, bias voting for class 1
    stack.params()[stack.final_w()].value.fill(0.0);
    Matrix bias(1, 3);
    bias.data = {0.0, 5.0, 0.0};
    stack.params()[stack.final_b()].value = bias;
    for (const auto& lad : stack.ladders()) stack.params()[lad.omega].value.data[0] = -1000.0;

    auto nodes = g.split_nodes(Split::Test);
    std::size_t count1 = 0;
    for (NodeId v : nodes) {
        if (g.labels[v] == 1) ++count1;
    }
    double acc = evaluate(g, provider, stack, khop_cfg(), Split::Test);
    CHECK(acc == doctest::Approx(static_cast<double>(count1) / nodes.size()).epsilon(1e-12));
    CHECK(evaluate(g, provider, stack, khop_cfg(), Split::Test) == acc);  // determinism
}

TEST_CASE("evaluate refuses an empty split") {
    TextualGraph g = make_separable_fixture();
    for (auto& s : g.splits) s = Split::Train;
    g.finalize();
    ToyTransformer enc(enc_cfg());
    LiveProvider provider(enc, g);
    GLadderStack stack(side_cfg(g.num_classes));
    CHECK_THROWS_AS(evaluate(g, provider, stack, khop_cfg(), Split::Test), ValidationError);
}

TEST_CASE("training and evaluation run end to end with the rwr sampler") {
    TextualGraph g = make_homophilous_graph({.num_nodes = 24, .num_classes = 2, .seed = 51});
    ToyTransformer enc(enc_cfg());
    EmbeddingCache cache = precompute_cache(enc, g, {0, 1, 2});
    CacheProvider provider(cache);
    GLadderStack stack(side_cfg(g.num_classes));
    SamplerConfig rwr;
    rwr.kind = SamplerKind::Rwr;
    rwr.walk_length = 8;
    rwr.num_walks = 4;
    rwr.restart_prob = 0.5;
    rwr.max_nodes = 8;
    rwr.seed = 3;
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 19;
    TrainResult res = train(g, provider, stack, rwr, cfg);
    CHECK(res.optimizer_steps == 3 * g.split_nodes(Split::Train).size());
    double acc = evaluate(g, provider, stack, rwr, Split::Test);
    CHECK(acc == evaluate(g, provider, stack, rwr, Split::Test));
}

TEST_CASE("metrics log lines are one json object per epoch") {
    testutil::TempDir tmp;
    TextualGraph g = make_separable_fixture();
    ToyTransformer enc(enc_cfg());
    EmbeddingCache cache = precompute_cache(enc, g, {0, 1, 2});
    CacheProvider provider(cache);
    GLadderStack stack(side_cfg(g.num_classes));
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 2;
    train(g, provider, stack, khop_cfg(), cfg, tmp.file("m.jsonl"));
    std::string log = testutil::read_text(tmp.file("m.jsonl"));
    std::size_t lines = 0;
    for (char c : log) {
        if (c == '\n') ++lines;
    }
    CHECK(lines == 3);
    CHECK(log.find("\"epoch\":0") != std::string::npos);
    CHECK(log.find("\"train_loss\":") != std::string::npos);
    CHECK(log.find("\"exit_losses\":[") != std::string::npos);
}
