#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "srforge/train.hpp"
#include "testutil.hpp"

using namespace srforge;
using namespace srforge::train;
using nn::Tensor;
using testutil::random_tensor;

namespace fs = std::filesystem;

namespace {

/// Smooth procedural sample pairs: hr is a band-limited texture, lr a 2x1
/// sub-sampled copy (enough structure for an L1 objective to bite on).
std::vector<SamplePair> toy_pairs(int count, int lr_side, std::uint64_t seed,
                                  bool preupscaled = false) {
    std::vector<SamplePair> out;
    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
        const int hr_side = lr_side * 2;
        const double fx = 0.2 + rng.uniform() * 0.5;
        const double fy = 0.2 + rng.uniform() * 0.5;
        const double phase = rng.uniform() * 6.28;
        std::vector<double> hr(std::size_t(3) * hr_side * hr_side);
        for (int b = 0; b < 3; ++b)
            for (int y = 0; y < hr_side; ++y)
                for (int x = 0; x < hr_side; ++x)
                    hr[std::size_t((b * hr_side + y) * hr_side + x)] =
                        0.5 + 0.4 * std::sin(fx * x + 0.3 * b + phase) * std::cos(fy * y);
        std::vector<double> lr(std::size_t(3) * lr_side * lr_side);
        for (int b = 0; b < 3; ++b)
            for (int y = 0; y < lr_side; ++y)
                for (int x = 0; x < lr_side; ++x) {
                    double acc = 0.0;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            acc += hr[std::size_t((b * hr_side + 2 * y + dy) * hr_side + 2 * x +
                                                  dx)];
                    lr[std::size_t((b * lr_side + y) * lr_side + x)] = acc / 4.0;
                }
        SamplePair pair;
        pair.hr = Tensor::from_data({3, hr_side, hr_side}, std::move(hr));
        if (preupscaled) {
            // Nearest upscale stands in for the bicubic pre-upscale here.
            std::vector<double> up(std::size_t(3) * hr_side * hr_side);
            for (int b = 0; b < 3; ++b)
                for (int y = 0; y < hr_side; ++y)
                    for (int x = 0; x < hr_side; ++x)
                        up[std::size_t((b * hr_side + y) * hr_side + x)] =
                            lr[std::size_t((b * lr_side + y / 2) * lr_side + x / 2)];
            pair.lr = Tensor::from_data({3, hr_side, hr_side}, std::move(up));
        } else {
            pair.lr = Tensor::from_data({3, lr_side, lr_side}, std::move(lr));
        }
        out.push_back(std::move(pair));
    }
    return out;
}

double validation_l1(zoo::Model& gen, const std::vector<SamplePair>& val) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& s : val) {
        auto x = Tensor::from_data({1, s.lr.dim(0), s.lr.dim(1), s.lr.dim(2)}, s.lr.data());
        auto y = gen.forward(x, false);
        for (std::size_t i = 0; i < y.data().size(); ++i)
            total += std::abs(y.data()[i] - s.hr.data()[i]);
        count += y.data().size();
    }
    return total / double(count);
}

} // namespace

TEST_CASE("plateau scheduler halves at the 10th stagnant epoch and stops at the 25th") {
    PlateauScheduler sched(10, 25);
    CHECK(sched.observe(20.0).improved);
    int halve_epochs = 0, stop_epoch = -1;
    for (int epoch = 1; epoch <= 30; ++epoch) {
        const auto d = sched.observe(19.0); // stagnant metric injection
        if (d.halve) ++halve_epochs;
        if (d.stop) {
            stop_epoch = epoch;
            break;
        }
    }
    CHECK(halve_epochs == 2);  // fired at stagnant epochs 10 and 20
    CHECK(stop_epoch == 25);

    PlateauScheduler sched2(10, 25);
    sched2.observe(1.0);
    for (int i = 0; i < 9; ++i) CHECK_FALSE(sched2.observe(0.5).halve);
    CHECK(sched2.observe(0.5).halve); // exactly the 10th non-improving epoch
    // An improvement resets both counters.
    CHECK(sched2.observe(2.0).improved);
    CHECK(sched2.epochs_since_best() == 0);
}

TEST_CASE("schedule spec validates and round-trips") {
    ScheduleSpec s;
    s.validate();
    auto back = ScheduleSpec::from_json(s.to_json());
    CHECK(back.pretrain_lr0 == s.pretrain_lr0);
    CHECK(back.gan_halve_every == 500);
    CHECK(back.gan_total_epochs == 2000);

    ScheduleSpec bad;
    bad.stop_patience = 5; // below plateau_patience
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("pretrain reduces validation L1 on a toy set") {
    zoo::ModelSpec spec;
    spec.kind = zoo::ModelKind::Srcnn;
    spec.seed = 11;
    auto gen = zoo::build_model(spec);

    auto train_set = toy_pairs(20, 8, 1234, true);
    auto val_set = toy_pairs(4, 8, 99, true);

    const double epoch0 = validation_l1(*gen, val_set);

    ScheduleSpec sched;
    sched.batch_size = 4;
    sched.pretrain_max_epochs = 25;
    auto record = pretrain(*gen, train_set, val_set, sched, 42);
    REQUIRE_FALSE(record.diverged);
    REQUIRE_FALSE(record.epochs.empty());

    const double final_l1 = validation_l1(*gen, val_set);
    CHECK(final_l1 < 0.5 * epoch0);
    // Record sanity: epochs indexed monotonically, seed recorded.
    for (std::size_t i = 0; i < record.epochs.size(); ++i)
        CHECK(record.epochs[i].epoch == int(i));
    CHECK(record.to_jsonl().find("\"seed\":42") != std::string::npos);
}

TEST_CASE("pretrain is reproducible for a fixed seed") {
    auto run = []() {
        zoo::ModelSpec spec;
        spec.kind = zoo::ModelKind::Srcnn;
        spec.seed = 5;
        auto gen = zoo::build_model(spec);
        auto train_set = toy_pairs(8, 8, 7, true);
        auto val_set = toy_pairs(2, 8, 8, true);
        ScheduleSpec sched;
        sched.batch_size = 4;
        sched.pretrain_max_epochs = 3;
        auto record = pretrain(*gen, train_set, val_set, sched, 77);
        return record.to_jsonl();
    };
    REQUIRE(run() == run());
}

TEST_CASE("discriminator and generator steps do not touch each other's parameters") {
    zoo::ModelSpec gspec;
    gspec.kind = zoo::ModelKind::EsrganGen;
    gspec.channels = 16;
    gspec.n_rrdb = 1;
    gspec.seed = 3;
    auto gen = zoo::build_model(gspec);
    zoo::ModelSpec dspec;
    dspec.kind = zoo::ModelKind::DiscUnet;
    dspec.hr_size = 16;
    dspec.seed = 4;
    auto disc = zoo::build_model(dspec);

    Rng rng(110);
    auto x = random_tensor(rng, {2, 3, 8, 8}, false, 0.0, 1.0);
    auto y = random_tensor(rng, {2, 3, 16, 16}, false, 0.0, 1.0);

    const auto gen_before = train::detail::snapshot_parameters(*gen);

    // Discriminator step exactly as the training loop performs it.
    nn::Adam disc_opt;
    disc->registry().zero_grad();
    auto fake = gen->forward(x, true).detach();
    auto c_real = disc->forward(y, true);
    auto c_fake = disc->forward(fake, true);
    auto [z_rf, z_fr] = relativistic_logits(c_real, c_fake);
    discriminator_adv_loss(z_rf, z_fr).backward();
    disc_opt.step(disc->registry().parameters(), 1e-4);

    const auto gen_after = train::detail::snapshot_parameters(*gen);
    REQUIRE(gen_after == gen_before);

    // Generator step leaves discriminator parameters bit-identical.
    const auto disc_before = train::detail::snapshot_parameters(*disc);
    nn::Adam gen_opt;
    gen->registry().zero_grad();
    auto fake2 = gen->forward(x, true);
    auto c_real2 = disc->forward(y, true).detach();
    auto c_fake2 = disc->forward(fake2, true);
    auto [z_rf2, z_fr2] = relativistic_logits(c_real2, c_fake2);
    auto adv = generator_adv_loss(z_rf2, z_fr2);
    auto l1 = l1_loss(fake2, y);
    LossWeights w;
    auto total = total_generator_loss(Tensor::scalar(0.0), adv, l1, w);
    total.backward();
    gen_opt.step(gen->registry().parameters(), 1e-4);

    REQUIRE(train::detail::snapshot_parameters(*disc) == disc_before);
    REQUIRE(train::detail::snapshot_parameters(*gen) != gen_before);
}

TEST_CASE("one adam step decreases the fixed-batch loss for every model kind") {
    Rng rng(111);
    auto x = random_tensor(rng, {2, 3, 16, 16}, false, 0.0, 1.0);
    auto y = random_tensor(rng, {2, 3, 32, 32}, false, 0.0, 1.0);
    auto y_same = random_tensor(rng, {2, 3, 32, 32}, false, 0.0, 1.0);

    const auto descend = [&](zoo::ModelKind kind) {
        zoo::ModelSpec spec;
        spec.kind = kind;
        spec.hr_size = 32;
        spec.seed = 13;
        if (kind == zoo::ModelKind::EsrganGen) {
            spec.channels = 16;
            spec.n_rrdb = 1;
        }
        auto model = zoo::build_model(spec);
        nn::Adam opt;
        const auto loss_value = [&]() {
            if (model->is_generator()) {
                auto input = model->wants_preupscaled_input() ? y_same : x;
                return l1_loss(model->forward(input, true), y);
            }
            auto c_real = model->forward(y, true);
            auto c_fake = model->forward(y_same, true);
            auto [z_rf, z_fr] = relativistic_logits(c_real, c_fake);
            return discriminator_adv_loss(z_rf, z_fr);
        };
        // Settle spectral-norm power iterations so the effective weights are
        // stable between the two measurements.
        if (kind == zoo::ModelKind::DiscUnet)
            for (int i = 0; i < 30; ++i) loss_value();
        model->registry().zero_grad();
        auto before = loss_value();
        before.backward();
        opt.step(model->registry().parameters(), 1e-4);
        auto after = loss_value();
        INFO(zoo::kind_name(kind));
        REQUIRE(after.item() < before.item());
    };

    descend(zoo::ModelKind::Srcnn);
    descend(zoo::ModelKind::Srresnet);
    descend(zoo::ModelKind::EsrganGen);
    descend(zoo::ModelKind::DiscClassic);
    descend(zoo::ModelKind::DiscUnet);
}

TEST_CASE("adversarial smoke run completes with finite losses") {
    zoo::ModelSpec gspec;
    gspec.kind = zoo::ModelKind::EsrganGen;
    gspec.channels = 16;
    gspec.n_rrdb = 1;
    gspec.seed = 21;
    auto gen = zoo::build_model(gspec);
    zoo::ModelSpec dspec;
    dspec.kind = zoo::ModelKind::DiscUnet;
    dspec.hr_size = 16;
    dspec.seed = 22;
    auto disc = zoo::build_model(dspec);
    zoo::ModelSpec bspec;
    bspec.kind = zoo::ModelKind::FeatureBackbone;
    bspec.seed = 23;
    auto backbone = zoo::build_model(bspec);
    auto* fb = dynamic_cast<zoo::FeatureBackboneModel*>(backbone.get());

    auto train_set = toy_pairs(6, 8, 300);
    auto val_set = toy_pairs(2, 8, 301);

    ScheduleSpec sched;
    sched.batch_size = 3;
    sched.gan_total_epochs = 2;
    sched.gan_halve_every = 1; // halving fires at epoch 1
    LossWeights weights;

    auto record = adversarial_train(*gen, *disc, *fb, train_set, val_set, weights, sched, 55);
    REQUIRE_FALSE(record.diverged);
    REQUIRE(record.epochs.size() == 2);
    for (const auto& e : record.epochs) {
        CHECK(std::isfinite(e.loss_total));
        CHECK(std::isfinite(e.loss_adv_g));
        CHECK(std::isfinite(e.loss_adv_d));
        CHECK(std::isfinite(e.loss_percep));
    }
    // Learning-rate halving at configured epoch multiples.
    CHECK(record.epochs[0].lr_g == Catch::Approx(1e-4));
    CHECK(record.epochs[1].lr_g == Catch::Approx(5e-5));
}

TEST_CASE("degenerate adversarial weights reproduce pure L1 pretraining bit-exactly") {
    auto build_gen = []() {
        zoo::ModelSpec spec;
        spec.kind = zoo::ModelKind::EsrganGen;
        spec.channels = 16;
        spec.n_rrdb = 1;
        spec.seed = 31;
        return zoo::build_model(spec);
    };
    auto train_set = toy_pairs(6, 8, 500);
    auto val_set = toy_pairs(2, 8, 501);

    // Reference: plain L1 pretraining at the adversarial learning rate.
    auto gen_ref = build_gen();
    ScheduleSpec ref_sched;
    ref_sched.batch_size = 3;
    ref_sched.pretrain_max_epochs = 3;
    ref_sched.pretrain_lr0 = 1e-4;
    ref_sched.plateau_patience = 100;
    ref_sched.stop_patience = 101;
    auto ref_record = pretrain(*gen_ref, train_set, val_set, ref_sched, 66);
    REQUIRE(int(ref_record.epochs.size()) == 3);

    // Adversarial run with lambda = 0, eta = 1, zero perceptual weights.
    auto gen_adv = build_gen();
    zoo::ModelSpec dspec;
    dspec.kind = zoo::ModelKind::DiscUnet;
    dspec.hr_size = 16;
    dspec.seed = 32;
    auto disc = zoo::build_model(dspec);
    zoo::ModelSpec bspec;
    bspec.kind = zoo::ModelKind::FeatureBackbone;
    bspec.seed = 33;
    auto backbone = zoo::build_model(bspec);
    auto* fb = dynamic_cast<zoo::FeatureBackboneModel*>(backbone.get());

    ScheduleSpec sched;
    sched.batch_size = 3;
    sched.gan_total_epochs = 3;
    sched.gan_halve_every = 1000;
    sched.gan_lr0 = 1e-4;
    LossWeights degenerate;
    degenerate.lambda = 0.0;
    degenerate.eta = 1.0;
    degenerate.percep_layer_weights = {0.0, 0.0, 0.0, 0.0, 0.0};

    auto adv_record =
        adversarial_train(*gen_adv, *disc, *fb, train_set, val_set, degenerate, sched, 66);
    REQUIRE_FALSE(adv_record.diverged);
    REQUIRE(int(adv_record.epochs.size()) == 3);

    // Identical per-epoch L1 losses, identical per-epoch validation PSNR.
    for (int e = 0; e < 3; ++e) {
        REQUIRE(adv_record.epochs[std::size_t(e)].loss_l1 ==
                ref_record.epochs[std::size_t(e)].loss_l1);
        REQUIRE(adv_record.epochs[std::size_t(e)].val_psnr ==
                ref_record.epochs[std::size_t(e)].val_psnr);
    }
}

TEST_CASE("training records divergence with the parameter name") {
    zoo::ModelSpec spec;
    spec.kind = zoo::ModelKind::Srcnn;
    spec.seed = 41;
    auto gen = zoo::build_model(spec);
    // Poison a weight so the first forward emits non-finite values.
    for (auto& p : gen->registry().parameters())
        if (p.name == "conv1.weight")
            p.tensor.data()[0] = std::numeric_limits<double>::quiet_NaN();

    auto train_set = toy_pairs(4, 8, 600, true);
    auto val_set = toy_pairs(2, 8, 601, true);
    ScheduleSpec sched;
    sched.batch_size = 2;
    sched.pretrain_max_epochs = 2;
    auto record = pretrain(*gen, train_set, val_set, sched, 1);
    CHECK(record.diverged);
    CHECK_FALSE(record.divergence_message.empty());
}

TEST_CASE("pretrain writes best checkpoint and record files") {
    const auto dir = fs::temp_directory_path() / "srforge_train_ckpt";
    fs::create_directories(dir);
    zoo::ModelSpec spec;
    spec.kind = zoo::ModelKind::Srcnn;
    spec.seed = 51;
    auto gen = zoo::build_model(spec);
    auto train_set = toy_pairs(6, 8, 700, true);
    auto val_set = toy_pairs(2, 8, 701, true);
    ScheduleSpec sched;
    sched.batch_size = 3;
    sched.pretrain_max_epochs = 2;
    auto record = pretrain(*gen, train_set, val_set, sched, 9, dir.string(), "toy");
    CHECK(fs::exists(dir / "toy_best.json"));
    CHECK(fs::exists(dir / "toy_best.srwt"));
    CHECK(fs::exists(dir / "toy_record.jsonl"));
    CHECK_FALSE(record.best_checkpoint.empty());

    // Checkpoint loads into an identical forward map.
    auto loaded = zoo::load_model((dir / "toy_best").string());
    auto x = Tensor::from_data({1, 3, 16, 16},
                               std::vector<double>(std::size_t(3 * 16 * 16), 0.5));
    CHECK(loaded->forward(x, false).data() == gen->forward(x, false).data());
    fs::remove_all(dir);
}
