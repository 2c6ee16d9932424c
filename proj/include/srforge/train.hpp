#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srforge/losses.hpp"
#include "srforge/metrics.hpp"
#include "srforge/models.hpp"

namespace srforge::train {

/// Learning-rate schedule and loop sizing. Field defaults follow the training
/// protocol this toolkit reproduces; everything is overridable for
/// desk-scale runs.
struct ScheduleSpec {
    double pretrain_lr0 = 2e-4;
    int plateau_patience = 10;   // epochs without val-PSNR improvement before halving
    int stop_patience = 25;      // epochs without improvement before stopping
    int pretrain_max_epochs = 100000;
    double gan_lr0 = 1e-4;
    int gan_halve_every = 500;   // epochs
    int gan_total_epochs = 2000;
    int batch_size = 8;
    int checkpoint_every = 0;    // adversarial phase cadence; 0 = final only

    void validate() const {
        require(plateau_patience > 0 && stop_patience > 0, "train",
                "patience values must be positive");
        require(stop_patience > plateau_patience, "train",
                "stop_patience must exceed plateau_patience");
        require(batch_size >= 2, "train", "batch size must be >= 2");
        require(pretrain_lr0 > 0 && gan_lr0 > 0, "train", "learning rates must be positive");
        require(gan_halve_every > 0 && gan_total_epochs >= 0, "train",
                "adversarial schedule must be positive");
    }

    nlohmann::json to_json() const {
        return {{"pretrain_lr0", pretrain_lr0},
                {"plateau_patience", plateau_patience},
                {"stop_patience", stop_patience},
                {"pretrain_max_epochs", pretrain_max_epochs},
                {"gan_lr0", gan_lr0},
                {"gan_halve_every", gan_halve_every},
                {"gan_total_epochs", gan_total_epochs},
                {"batch_size", batch_size},
                {"checkpoint_every", checkpoint_every}};
    }

    static ScheduleSpec from_json(const nlohmann::json& j) {
        ScheduleSpec s;
        s.pretrain_lr0 = j.value("pretrain_lr0", s.pretrain_lr0);
        s.plateau_patience = j.value("plateau_patience", s.plateau_patience);
        s.stop_patience = j.value("stop_patience", s.stop_patience);
        s.pretrain_max_epochs = j.value("pretrain_max_epochs", s.pretrain_max_epochs);
        s.gan_lr0 = j.value("gan_lr0", s.gan_lr0);
        s.gan_halve_every = j.value("gan_halve_every", s.gan_halve_every);
        s.gan_total_epochs = j.value("gan_total_epochs", s.gan_total_epochs);
        s.batch_size = j.value("batch_size", s.batch_size);
        s.checkpoint_every = j.value("checkpoint_every", s.checkpoint_every);
        s.validate();
        return s;
    }
};

/// Plateau tracker over a maximize-me metric. Halve fires on every
/// plateau_patience-th consecutive non-improving epoch, stop once
/// stop_patience of them accumulate.
class PlateauScheduler {
public:
    PlateauScheduler(int plateau_patience, int stop_patience)
        : plateau_(plateau_patience), stop_(stop_patience) {}

    struct Decision {
        bool improved = false;
        bool halve = false;
        bool stop = false;
    };

    Decision observe(double metric) {
        if (metric > best_) {
            best_ = metric;
            since_best_ = 0;
            return {true, false, false};
        }
        ++since_best_;
        Decision d;
        d.halve = since_best_ % plateau_ == 0;
        d.stop = since_best_ >= stop_;
        return d;
    }

    double best() const { return best_; }
    int epochs_since_best() const { return since_best_; }

private:
    int plateau_, stop_;
    double best_ = -std::numeric_limits<double>::infinity();
    int since_best_ = 0;
};

/// One aligned LR/HR training example, stored as (3,h,w) tensors in [0,1].
/// For a pre-upscaling generator the loader supplies `lr` already upscaled.
struct SamplePair {
    nn::Tensor lr;
    nn::Tensor hr;
};

struct EpochRecord {
    int epoch = 0;
    double lr_g = 0.0;
    double lr_d = 0.0;
    double loss_total = 0.0;
    double loss_l1 = 0.0;
    double loss_percep = 0.0;
    double loss_adv_g = 0.0;
    double loss_adv_d = 0.0;
    double val_psnr = 0.0;
    bool improved = false;
    std::string checkpoint;

    nlohmann::json to_json(std::uint64_t seed) const {
        nlohmann::json j{{"epoch", epoch},
                         {"seed", seed},
                         {"lr_g", lr_g},
                         {"loss_total", loss_total},
                         {"loss_l1", loss_l1},
                         {"val_psnr", std::isfinite(val_psnr) ? nlohmann::json(val_psnr)
                                                              : nlohmann::json("inf")},
                         {"improved", improved}};
        if (lr_d > 0.0) {
            j["lr_d"] = lr_d;
            j["loss_percep"] = loss_percep;
            j["loss_adv_g"] = loss_adv_g;
            j["loss_adv_d"] = loss_adv_d;
        }
        if (!checkpoint.empty()) j["checkpoint"] = checkpoint;
        return j;
    }
};

struct TrainRunRecord {
    std::uint64_t seed = 0;
    std::vector<EpochRecord> epochs;
    bool diverged = false;
    std::string divergence_message;
    int best_epoch = -1;
    double best_val_psnr = -std::numeric_limits<double>::infinity();
    std::string best_checkpoint;
    std::string final_checkpoint;

    std::string to_jsonl() const {
        std::string out;
        for (const auto& e : epochs) out += e.to_json(seed).dump() + "\n";
        if (diverged)
            out += nlohmann::json{{"diverged", true}, {"seed", seed},
                                  {"message", divergence_message}}
                       .dump() +
                   "\n";
        return out;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::trunc);
        require(bool(out), "train", "cannot write run record " + path);
        out << to_jsonl();
    }
};

namespace detail {

inline nn::Tensor stack_batch(const std::vector<SamplePair>& set,
                              const std::vector<std::size_t>& order, std::size_t begin,
                              std::size_t end, bool take_lr) {
    const nn::Tensor& first = take_lr ? set[order[begin]].lr : set[order[begin]].hr;
    const auto shape = first.shape();
    const std::int64_t per = nn::shape_size(shape);
    std::vector<double> data;
    data.reserve(std::size_t(per) * (end - begin));
    for (std::size_t i = begin; i < end; ++i) {
        const nn::Tensor& t = take_lr ? set[order[i]].lr : set[order[i]].hr;
        require(t.shape() == shape, "train", "inconsistent sample shapes in a batch");
        data.insert(data.end(), t.data().begin(), t.data().end());
    }
    return nn::Tensor::from_data({std::int64_t(end - begin), shape[0], shape[1], shape[2]},
                                 std::move(data));
}

/// Mean validation PSNR of the generator in eval mode (finite items only;
/// all-identical outputs give +inf).
inline double validation_psnr(zoo::Model& gen, const std::vector<SamplePair>& val) {
    double sum = 0.0;
    int finite = 0;
    bool any_inf = false;
    for (const auto& sample : val) {
        auto x = nn::Tensor::from_data({1, sample.lr.dim(0), sample.lr.dim(1), sample.lr.dim(2)},
                                       sample.lr.data());
        auto y = gen.forward(x, false);
        double sse = 0.0;
        for (std::size_t i = 0; i < y.data().size(); ++i) {
            const double d = y.data()[i] - sample.hr.data()[i];
            sse += d * d;
        }
        if (sse == 0.0) {
            any_inf = true;
            continue;
        }
        sum += 10.0 * std::log10(double(y.data().size()) / sse);
        ++finite;
    }
    if (finite == 0)
        return any_inf ? std::numeric_limits<double>::infinity() : 0.0;
    return sum / finite;
}

inline std::vector<std::vector<double>> snapshot_parameters(const zoo::Model& model) {
    std::vector<std::vector<double>> out;
    for (const auto& p : model.registry().parameters()) out.push_back(p.tensor.data());
    return out;
}

inline void restore_parameters(zoo::Model& model, const std::vector<std::vector<double>>& snap) {
    auto& params = model.registry().parameters();
    require(params.size() == snap.size(), "train", "snapshot size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor.data() = snap[i];
}

} // namespace detail

/// Phase one: minimize the mean absolute error with Adam, halving the
/// learning rate after plateau_patience epochs without validation-PSNR
/// improvement and stopping after stop_patience of them. The best-validation
/// weights are written to <out_dir>/<name>_best.{json,srwt} and restored into
/// the model when the loop ends.
inline TrainRunRecord pretrain(zoo::Model& generator, const std::vector<SamplePair>& train_set,
                               const std::vector<SamplePair>& val_set, const ScheduleSpec& sched,
                               std::uint64_t seed, const std::string& out_dir = "",
                               const std::string& name = "pretrain") {
    sched.validate();
    require(!train_set.empty() && !val_set.empty(), "train", "datasets must be nonempty");
    require(generator.is_generator(), "train", "pretrain expects a generator model");

    TrainRunRecord record;
    record.seed = seed;
    Rng rng(seed);
    nn::Adam opt;
    double lr = sched.pretrain_lr0;
    PlateauScheduler scheduler(sched.plateau_patience, sched.stop_patience);
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<std::vector<double>> best_weights = detail::snapshot_parameters(generator);

    const std::size_t batch = std::size_t(sched.batch_size);
    for (int epoch = 0; epoch < sched.pretrain_max_epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        bool ok = true;
        for (std::size_t begin = 0; begin + 1 < train_set.size() + 1; begin += batch) {
            const std::size_t end = std::min(begin + batch, train_set.size());
            if (end - begin < 2) break; // batch-norm needs >= 2 samples
            auto x = detail::stack_batch(train_set, order, begin, end, true);
            auto y = detail::stack_batch(train_set, order, begin, end, false);
            generator.registry().zero_grad();
            auto out = generator.forward(x, true);
            auto loss = l1_loss(out, y);
            if (!std::isfinite(loss.item())) {
                record.diverged = true;
                record.divergence_message = "non-finite training loss at epoch " +
                                            std::to_string(epoch);
                ok = false;
                break;
            }
            loss.backward();
            try {
                opt.step(generator.registry().parameters(), lr);
            } catch (const Error& e) {
                record.diverged = true;
                record.divergence_message = e.what();
                ok = false;
                break;
            }
            epoch_loss += loss.item();
            ++batches;
        }
        if (!ok) break;

        EpochRecord er;
        er.epoch = epoch;
        er.lr_g = lr;
        er.loss_total = er.loss_l1 = batches ? epoch_loss / double(batches) : 0.0;
        er.val_psnr = detail::validation_psnr(generator, val_set);

        const auto decision = scheduler.observe(er.val_psnr);
        er.improved = decision.improved;
        if (decision.improved) {
            best_weights = detail::snapshot_parameters(generator);
            record.best_epoch = epoch;
            record.best_val_psnr = er.val_psnr;
            if (!out_dir.empty()) {
                const std::string prefix =
                    (std::filesystem::path(out_dir) / (name + "_best")).string();
                zoo::save_model(generator, prefix);
                er.checkpoint = prefix;
                record.best_checkpoint = prefix;
            }
        }
        record.epochs.push_back(er);
        if (decision.halve) lr *= 0.5;
        if (decision.stop) break;
    }

    detail::restore_parameters(generator, best_weights);
    if (!out_dir.empty()) {
        const std::string prefix = (std::filesystem::path(out_dir) / (name + "_best")).string();
        zoo::save_model(generator, prefix);
        record.best_checkpoint = prefix;
        record.final_checkpoint = prefix;
        record.save((std::filesystem::path(out_dir) / (name + "_record.jsonl")).string());
    }
    return record;
}

/// Phase two: alternating relativistic-average adversarial training. Each
/// batch takes one discriminator step on L_D^Ra, then one generator step on
/// L_percep + lambda L_G^Ra + eta L_1. Learning rates halve every
/// gan_halve_every epochs. Divergence aborts with the record and the last
/// epoch-end weights saved as <name>_last_good.
inline TrainRunRecord adversarial_train(zoo::Model& generator, zoo::Model& discriminator,
                                        zoo::FeatureBackboneModel& backbone,
                                        const std::vector<SamplePair>& train_set,
                                        const std::vector<SamplePair>& val_set,
                                        const LossWeights& weights, const ScheduleSpec& sched,
                                        std::uint64_t seed, const std::string& out_dir = "",
                                        const std::string& name = "gan") {
    sched.validate();
    weights.validate();
    require(!train_set.empty() && !val_set.empty(), "train", "datasets must be nonempty");
    require(generator.is_generator(), "train", "adversarial_train expects a generator");
    require(discriminator.spec().kind == zoo::ModelKind::DiscClassic ||
                discriminator.spec().kind == zoo::ModelKind::DiscUnet,
            "train", "adversarial_train expects a discriminator model");

    TrainRunRecord record;
    record.seed = seed;
    Rng rng(seed);
    nn::Adam gen_opt, disc_opt;
    double lr_g = sched.gan_lr0, lr_d = sched.gan_lr0;
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    auto last_good_gen = detail::snapshot_parameters(generator);
    auto last_good_disc = detail::snapshot_parameters(discriminator);
    double best_val = -std::numeric_limits<double>::infinity();

    const std::size_t batch = std::size_t(sched.batch_size);
    const auto checkpoint_prefix = [&](const std::string& tag) {
        return (std::filesystem::path(out_dir) / (name + "_" + tag)).string();
    };

    for (int epoch = 0; epoch < sched.gan_total_epochs; ++epoch) {
        if (epoch > 0 && epoch % sched.gan_halve_every == 0) {
            lr_g *= 0.5;
            lr_d *= 0.5;
        }
        rng.shuffle(order);
        double sum_total = 0.0, sum_l1 = 0.0, sum_percep = 0.0, sum_adv_g = 0.0,
               sum_adv_d = 0.0;
        std::size_t batches = 0;
        bool ok = true;
        for (std::size_t begin = 0; begin + 1 < train_set.size() + 1 && ok; begin += batch) {
            const std::size_t end = std::min(begin + batch, train_set.size());
            if (end - begin < 2) break;
            auto x = detail::stack_batch(train_set, order, begin, end, true);
            auto y = detail::stack_batch(train_set, order, begin, end, false);
            try {
                // Discriminator step on detached fakes.
                discriminator.registry().zero_grad();
                auto fake_detached = generator.forward(x, true).detach();
                auto c_real = discriminator.forward(y, true);
                auto c_fake = discriminator.forward(fake_detached, true);
                auto [z_rf, z_fr] = relativistic_logits(c_real, c_fake);
                auto loss_d = discriminator_adv_loss(z_rf, z_fr);
                require(std::isfinite(loss_d.item()), "train",
                        "divergence: non-finite discriminator loss");
                loss_d.backward();
                disc_opt.step(discriminator.registry().parameters(), lr_d);

                // Generator step on the full objective.
                generator.registry().zero_grad();
                discriminator.registry().zero_grad();
                auto fake = generator.forward(x, true);
                auto c_real2 = discriminator.forward(y, true).detach();
                auto c_fake2 = discriminator.forward(fake, true);
                auto [z_rf2, z_fr2] = relativistic_logits(c_real2, c_fake2);
                auto adv = generator_adv_loss(z_rf2, z_fr2);
                auto percep = perceptual_loss(fake, y, backbone, weights.percep_layer_weights);
                auto l1 = l1_loss(fake, y);
                auto total = total_generator_loss(percep, adv, l1, weights);
                total.backward();
                gen_opt.step(generator.registry().parameters(), lr_g);

                sum_total += total.item();
                sum_l1 += l1.item();
                sum_percep += percep.item();
                sum_adv_g += adv.item();
                sum_adv_d += loss_d.item();
                ++batches;
            } catch (const Error& e) {
                record.diverged = true;
                record.divergence_message = e.what();
                ok = false;
            }
        }
        if (!ok) {
            detail::restore_parameters(generator, last_good_gen);
            detail::restore_parameters(discriminator, last_good_disc);
            if (!out_dir.empty()) {
                zoo::save_model(generator, checkpoint_prefix("last_good"));
                record.final_checkpoint = checkpoint_prefix("last_good");
            }
            break;
        }

        last_good_gen = detail::snapshot_parameters(generator);
        last_good_disc = detail::snapshot_parameters(discriminator);

        EpochRecord er;
        er.epoch = epoch;
        er.lr_g = lr_g;
        er.lr_d = lr_d;
        er.loss_total = batches ? sum_total / double(batches) : 0.0;
        er.loss_l1 = batches ? sum_l1 / double(batches) : 0.0;
        er.loss_percep = batches ? sum_percep / double(batches) : 0.0;
        er.loss_adv_g = batches ? sum_adv_g / double(batches) : 0.0;
        er.loss_adv_d = batches ? sum_adv_d / double(batches) : 0.0;
        er.val_psnr = detail::validation_psnr(generator, val_set);
        if (er.val_psnr > best_val) {
            best_val = er.val_psnr;
            er.improved = true;
            record.best_epoch = epoch;
            record.best_val_psnr = er.val_psnr;
            if (!out_dir.empty()) {
                zoo::save_model(generator, checkpoint_prefix("best"));
                record.best_checkpoint = checkpoint_prefix("best");
            }
        }
        if (!out_dir.empty() && sched.checkpoint_every > 0 &&
            (epoch + 1) % sched.checkpoint_every == 0) {
            const std::string prefix =
                checkpoint_prefix("epoch" + std::to_string(epoch + 1));
            zoo::save_model(generator, prefix);
            er.checkpoint = prefix;
        }
        record.epochs.push_back(er);
    }

    if (!record.diverged && !out_dir.empty()) {
        zoo::save_model(generator, checkpoint_prefix("final"));
        record.final_checkpoint = checkpoint_prefix("final");
    }
    if (!out_dir.empty())
        record.save((std::filesystem::path(out_dir) / (name + "_record.jsonl")).string());
    return record;
}

} // namespace srforge::train
