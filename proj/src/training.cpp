#include "scribble/training.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "scribble/error.hpp"

namespace scribble::training {

namespace fs = std::filesystem;
using losses::Label;
using losses::LossReport;

void TrainConfig::validate() const {
    model.validate();
    loss.validate();
    if (stage1_epochs < 1) throw ConfigError("stage1_epochs must be >= 1, got " + std::to_string(stage1_epochs));
    if (stage2_epochs < 0) throw ConfigError("stage2_epochs must be >= 0, got " + std::to_string(stage2_epochs));
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1, got " + std::to_string(batch_size));
    if (!(learning_rate >= 0)) throw ConfigError("learning_rate must be >= 0");
    if (!(decay >= 0)) throw ConfigError("decay must be >= 0");
    if (crop_size < 1 || crop_size % model.divisor() != 0) {
        throw ConfigError("crop_size " + std::to_string(crop_size) + " must be a positive multiple of 2^depth = " + std::to_string(model.divisor()));
    }
    if (!(pseudo_threshold > 0.5 && pseudo_threshold <= 1.0)) throw ConfigError("pseudo_threshold must be in (0.5, 1]");
    if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0)) throw ConfigError("ema_momentum must be in [0, 1]");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    deform::DeformationSpec{alpha, beta, RngState(0), deform::kDefaultRegularization}.validate();
}

TrainConfig TrainConfig::scaled(double scale) const {
    if (!(scale > 0)) throw ConfigError("scale must be > 0");
    TrainConfig c = *this;
    c.stage1_epochs = std::max(1, static_cast<int>(std::lround(stage1_epochs * scale)));
    c.stage2_epochs = static_cast<int>(std::lround(stage2_epochs * scale));
    return c;
}

OptimizerState make_optimizer(const model::ModelParams& params) {
    OptimizerState s;
    for (const auto& e : params.entries()) {
        s.m.emplace_back(e.declared, 0.0);
        s.v.emplace_back(e.declared, 0.0);
    }
    return s;
}

void radam_step(model::ModelParams& params, const ParamGrads& grads, OptimizerState& state, double lr, double decay, DecayMode mode,
                const RadamHyper& hp) {
    if (state.m.size() != params.size() || state.v.size() != params.size()) throw ShapeError("optimizer state does not match the parameter registry");
    for (const auto& e : params.entries()) {
        auto it = grads.find(e.name);
        if (it == grads.end()) throw ArgumentError("radam_step: no gradient for parameter '" + e.name + "'");
        if (it->second.shape() != e.value.shape()) {
            throw ShapeError("radam_step: gradient for '" + e.name + "' is " + to_string(it->second.shape()) + ", parameter is " + to_string(e.value.shape()));
        }
    }

    const long t = ++state.step;
    const double b1t = std::pow(hp.beta1, static_cast<double>(t));
    const double b2t = std::pow(hp.beta2, static_cast<double>(t));
    const double rho_inf = 2.0 / (1.0 - hp.beta2) - 1.0;
    const double rho_t = rho_inf - 2.0 * static_cast<double>(t) * b2t / (1.0 - b2t);
    const bool adaptive = rho_t > 4.0;
    const double rect =
        adaptive ? std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)) : 0.0;

    double step_lr = lr;
    double shrink = 1.0;
    if (mode == DecayMode::linear) {
        step_lr = lr * std::max(0.0, 1.0 - decay * static_cast<double>(t - 1));
    } else {
        shrink = 1.0 - lr * decay;
    }
    const bool f32 = precision() == Precision::f32;

    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& e = params.entries()[k];
        const Grid& g = grads.at(e.name);
        double* theta = e.value.data().data();
        double* m = state.m[k].data().data();
        double* v = state.v[k].data().data();
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
            const double m_hat = m[i] / (1.0 - b1t);
            double update = m_hat;
            if (adaptive) {
                const double v_hat = std::sqrt(v[i] / (1.0 - b2t));
                update = rect * m_hat / (v_hat + hp.eps);
            }
            theta[i] = theta[i] * shrink - step_lr * update;
            if (f32) theta[i] = static_cast<double>(static_cast<float>(theta[i]));
        }
    }
}

PseudoState make_pseudo(const data::Sample& sample) {
    return PseudoState{Grid(Shape{sample.scribble.height(), sample.scribble.width()}, 0.5), sample.scribble};
}

void relabel(PseudoState& state, const losses::ScribbleMap& scribble, double threshold) {
    for (std::size_t k = 0; k < state.ema.size(); ++k) {
        const Label s = scribble.labels()[k];
        const double e = state.ema[k];
        Label l = e >= threshold ? Label::target : e <= 1.0 - threshold ? Label::background : Label::unknown;
        state.labels.labels()[k] = s != Label::unknown ? s : l;
    }
}

void update_pseudo(PseudoState& state, const data::Sample& sample, const model::ModelConfig& cfg, const model::ModelParams& params,
                   double threshold, double momentum) {
    const Grid pred = model::predict_padded(cfg, params, sample.image);
    const std::size_t n = state.ema.size();
    for (std::size_t k = 0; k < n; ++k) state.ema[k] = std::clamp(momentum * state.ema[k] + (1.0 - momentum) * pred[k], 0.0, 1.0);
    relabel(state, sample.scribble, threshold);
}

RunState initial_state(const TrainConfig& config, const std::vector<data::Sample>& dataset) {
    RunState s;
    // stream 0 of the run seed is reserved for init; epochs use streams 1..
    s.params = model::init_params(config.model, RngState(config.seed).split(0));
    s.optimizer = make_optimizer(s.params);
    for (const auto& sample : dataset) s.pseudo.push_back(make_pseudo(sample));
    return s;
}

namespace {

void check_dataset(const std::vector<data::Sample>& dataset, const TrainConfig& config) {
    if (dataset.empty()) throw ArgumentError("training dataset is empty");
    for (const auto& s : dataset) {
        s.scribble.require_both_classes("sample '" + s.id + "'");
        if (s.image.dim(0) != config.model.input_channels) {
            throw ShapeError("sample '" + s.id + "' has " + std::to_string(s.image.dim(0)) + " channels, model expects " +
                             std::to_string(config.model.input_channels));
        }
        if (s.image.dim(1) < config.crop_size || s.image.dim(2) < config.crop_size) {
            throw ArgumentError("sample '" + s.id + "' (" + std::to_string(s.image.dim(1)) + "x" + std::to_string(s.image.dim(2)) +
                                ") is smaller than crop_size " + std::to_string(config.crop_size));
        }
    }
}

std::size_t annotated_in(const losses::ScribbleMap& m, data::CropWindow w, int crop) {
    std::size_t n = 0;
    for (int i = 0; i < crop; ++i)
        for (int j = 0; j < crop; ++j) n += m.at(w.top + i, w.left + j) != Label::unknown;
    return n;
}

constexpr int kCropAttempts = 16;

// Uniform window, redrawn while it holds no scribbled pixel.
data::CropWindow choose_crop(const data::Sample& s, int crop, RngState& rng) {
    data::CropWindow best;
    std::size_t best_n = 0;
    for (int attempt = 0; attempt < kCropAttempts; ++attempt) {
        const data::CropWindow w = data::draw_crop(s.image.dim(1), s.image.dim(2), crop, rng);
        const std::size_t n = annotated_in(s.scribble, w, crop);
        if (n > 0) return w;
        if (attempt == 0 || n > best_n) best = w, best_n = n;
    }
    return best;
}

void accumulate(LossReport& acc, const LossReport& r) {
    acc.l_pc += r.l_pc;
    acc.l_dc += r.l_dc;
    acc.length += r.length;
    acc.l_ic += r.l_ic;
    acc.l_ac += r.l_ac;
    acc.l_pseudo += r.l_pseudo;
    acc.l_total += r.l_total;
    acc.valid_pixel_count += r.valid_pixel_count;
}

}  // namespace

EpochRow train_epoch(const std::vector<data::Sample>& dataset, RunState& state, const TrainConfig& config, int epoch) {
    config.validate();
    check_dataset(dataset, config);
    if (epoch < 1) throw ArgumentError("epoch numbers start at 1");
    if (state.pseudo.size() != dataset.size()) throw ArgumentError("pseudo-label state does not match the dataset size");
    const int stage = epoch <= config.stage1_epochs ? 1 : 2;

    RngState rng = RngState(config.seed).split(static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    losses::LossConfig loss_cfg = config.loss;
    loss_cfg.enable_pseudo = stage == 2;
    if (stage == 2) {
        for (std::size_t k = 0; k < dataset.size(); ++k)
            update_pseudo(state.pseudo[k], dataset[k], config.model, state.params, config.pseudo_threshold, config.ema_momentum);
    }

    LossReport sum;
    std::size_t samples = 0;
    const std::size_t P = state.params.size();
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
        std::vector<Grid> acc;
        for (const auto& e : state.params.entries()) acc.emplace_back(e.declared, 0.0);

        for (std::size_t b = start; b < end; ++b) {
            const std::size_t idx = order[b];
            const data::Sample& full = dataset[idx];
            const data::CropWindow w = choose_crop(full, config.crop_size, rng);
            const data::Sample crop = data::crop_sample(full, w, config.crop_size);
            losses::ScribbleMap pseudo_crop;
            if (stage == 2) pseudo_crop = state.pseudo[idx].labels.crop(w.top, w.left, config.crop_size, config.crop_size);

            deform::DeformationSpec spec{config.alpha, config.beta, RngState(rng.next_u64()), deform::kDefaultRegularization};
            Tape tape;
            model::BoundParams bound(tape, state.params, true);
            losses::LossInputs in{&config.model, &bound, tape.constant(crop.image), &crop.scribble, stage == 2 ? &pseudo_crop : nullptr, spec};
            losses::TotalLoss tl;
            try {
                tl = losses::total_loss(in, loss_cfg);
            } catch (const NumericError& e) {
                throw NumericError("epoch " + std::to_string(epoch) + ", sample '" + full.id + "': " + e.what());
            }
            Gradients g = tape.backward(tl.total);
            for (std::size_t k = 0; k < P; ++k) {
                if (!g.contains(bound.vars()[k])) continue;
                const Grid& gk = g.of(bound.vars()[k]);
                double* dst = acc[k].data().data();
                for (std::size_t i = 0; i < gk.size(); ++i) dst[i] += gk[i];
            }
            accumulate(sum, tl.report);
            ++samples;
        }

        ParamGrads grads;
        const double inv = 1.0 / static_cast<double>(end - start);
        for (std::size_t k = 0; k < P; ++k) {
            for (double& x : acc[k].values()) x *= inv;
            grads.emplace(state.params.entries()[k].name, std::move(acc[k]));
        }
        radam_step(state.params, grads, state.optimizer, config.learning_rate, config.decay, config.decay_mode);
    }

    EpochRow row{epoch, stage, {}};
    const double n = static_cast<double>(samples);
    row.mean.l_pc = sum.l_pc / n;
    row.mean.l_dc = sum.l_dc / n;
    row.mean.length = sum.length / n;
    row.mean.l_ic = sum.l_ic / n;
    row.mean.l_ac = sum.l_ac / n;
    row.mean.l_pseudo = sum.l_pseudo / n;
    row.mean.l_total = sum.l_total / n;
    row.mean.valid_pixel_count = sum.valid_pixel_count / samples;
    return row;
}

std::string log_header() { return "epoch\tstage\tl_pc\tl_dc\tlength\tl_ic\tl_ac\tl_pseudo\tl_total"; }

std::string format_row(const EpochRow& r) {
    char buf[512];
    const auto& m = r.mean;
    std::snprintf(buf, sizeof buf, "%d\t%d\t%.10g\t%.10g\t%.10g\t%.10g\t%.10g\t%.10g\t%.10g", r.epoch, r.stage, m.l_pc, m.l_dc, m.length, m.l_ic,
                  m.l_ac, m.l_pseudo, m.l_total);
    return buf;
}

namespace {

constexpr char kStateMagic[4] = {'S', 'C', 'R', 'S'};
constexpr std::uint16_t kStateVersion = 1;

void put_u64(std::ostream& os, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::istream& is, const fs::path& path) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        const int c = is.get();
        if (c == EOF) throw IoError("truncated training state " + path.string());
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

void put_grid(std::ostream& os, const Grid& g) {
    put_u64(os, static_cast<std::uint64_t>(g.rank()));
    for (int d : g.shape()) put_u64(os, static_cast<std::uint64_t>(d));
    for (double x : g.data()) put_u64(os, std::bit_cast<std::uint64_t>(x));
}

Grid get_grid(std::istream& is, const fs::path& path) {
    const auto rank = get_u64(is, path);
    if (rank > 4) throw IoError("corrupt training state " + path.string());
    Shape shape;
    for (std::uint64_t a = 0; a < rank; ++a) shape.push_back(static_cast<int>(get_u64(is, path)));
    Grid g(shape);
    for (double& x : g.values()) x = std::bit_cast<double>(get_u64(is, path));
    return g;
}

}  // namespace

// Layout: "SCRS", u16 version, then u64 fields (little-endian): epochs_done,
// step, parameter count, per parameter (name length, name, value grid, m grid,
// v grid), pseudo count, per image (ema grid, label bytes). Values are f64 so
// a resumed run continues bit-exactly.
void save_state(const fs::path& path, const RunState& s) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open for writing: " + tmp.string());
        os.write(kStateMagic, 4);
        os.put(static_cast<char>(kStateVersion & 0xff)).put(static_cast<char>(kStateVersion >> 8));
        put_u64(os, static_cast<std::uint64_t>(s.epochs_done));
        put_u64(os, static_cast<std::uint64_t>(s.optimizer.step));
        put_u64(os, s.params.size());
        for (std::size_t k = 0; k < s.params.size(); ++k) {
            const auto& e = s.params.entries()[k];
            put_u64(os, e.name.size());
            os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
            put_grid(os, e.value);
            put_grid(os, s.optimizer.m[k]);
            put_grid(os, s.optimizer.v[k]);
        }
        put_u64(os, s.pseudo.size());
        for (const auto& p : s.pseudo) {
            put_grid(os, p.ema);
            for (Label l : p.labels.labels()) os.put(static_cast<char>(l));
        }
        if (!os) throw IoError("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

RunState load_state(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open training state " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kStateMagic, 4) != 0) throw IoError("not a training state file: " + path.string());
    const int lo = is.get(), hi = is.get();
    if (lo == EOF || hi == EOF || (lo | (hi << 8)) != kStateVersion) throw IoError("unsupported training state version in " + path.string());
    RunState s;
    s.epochs_done = static_cast<int>(get_u64(is, path));
    s.optimizer.step = static_cast<long>(get_u64(is, path));
    const auto count = get_u64(is, path);
    for (std::uint64_t k = 0; k < count; ++k) {
        const auto len = get_u64(is, path);
        if (len > 4096) throw IoError("corrupt training state " + path.string());
        std::string name(len, '\0');
        if (!is.read(name.data(), static_cast<std::streamsize>(len))) throw IoError("truncated training state " + path.string());
        Grid value = get_grid(is, path);
        s.params.declare(name, value.shape());
        s.params.get(name) = std::move(value);
        s.optimizer.m.push_back(get_grid(is, path));
        s.optimizer.v.push_back(get_grid(is, path));
    }
    const auto images = get_u64(is, path);
    for (std::uint64_t k = 0; k < images; ++k) {
        PseudoState p;
        p.ema = get_grid(is, path);
        if (p.ema.rank() != 2) throw IoError("corrupt training state " + path.string());
        p.labels = losses::ScribbleMap(p.ema.dim(0), p.ema.dim(1));
        for (Label& l : p.labels.labels()) {
            const int c = is.get();
            if (c == EOF || c > 2) throw IoError("corrupt training state " + path.string());
            l = static_cast<Label>(c);
        }
        s.pseudo.push_back(std::move(p));
    }
    if (is.peek() != EOF) throw IoError("trailing bytes in training state " + path.string());
    return s;
}

namespace {

std::string epoch_checkpoint_name(int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "epoch_%04d.ckpt", epoch);
    return buf;
}

// Keeps the header and the first `rows` data lines of an existing log.
void truncate_log(const fs::path& log, int rows) {
    std::vector<std::string> kept;
    {
        std::ifstream in(log);
        if (!in) throw IoError("cannot reopen training log " + log.string());
        std::string line;
        for (int k = 0; k <= rows && std::getline(in, line); ++k) kept.push_back(line);
    }
    if (static_cast<int>(kept.size()) != rows + 1) throw IoError("training log " + log.string() + " is shorter than the saved state");
    std::ofstream out(log, std::ios::trunc);
    for (const auto& l : kept) out << l << '\n';
}

}  // namespace

RunResult run_training(const TrainConfig& config, const std::vector<data::Sample>& dataset, const RunOptions& opt) {
    config.validate();
    check_dataset(dataset, config);
    if (opt.out_dir.empty()) throw ArgumentError("run_training: output directory is required");
    fs::create_directories(opt.out_dir);
    const fs::path log = opt.out_dir / "train_log.tsv";
    const fs::path state_file = opt.out_dir / "train_state.bin";

    RunResult result;
    if (opt.resume && fs::exists(state_file)) {
        result.state = load_state(state_file);
        model::check_compatible(config.model, result.state.params);
        if (result.state.pseudo.size() != dataset.size()) throw ArgumentError("saved state was made for a dataset of a different size");
        truncate_log(log, result.state.epochs_done);
    } else {
        result.state = initial_state(config, dataset);
        std::ofstream out(log, std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + log.string());
        out << log_header() << '\n';
    }

    const int total = config.stage1_epochs + config.stage2_epochs;
    RunState& st = result.state;
    for (int e = st.epochs_done + 1; e <= total; ++e) {
        if (opt.stop_after >= 0 && e > opt.stop_after) break;
        EpochRow row = train_epoch(dataset, st, config, e);
        st.epochs_done = e;
        {
            std::ofstream out(log, std::ios::app);
            if (!out) throw IoError("cannot append to " + log.string());
            out << format_row(row) << '\n';
        }
        if (opt.on_epoch) opt.on_epoch(row);
        result.rows.push_back(row);
        if (config.checkpoint_every > 0 && e % config.checkpoint_every == 0) {
            model::save_checkpoint(opt.out_dir / epoch_checkpoint_name(e), st.params);
            save_state(state_file, st);
        }
    }
    if (st.epochs_done == total) model::save_checkpoint(opt.out_dir / "final.ckpt", st.params);
    save_state(state_file, st);
    return result;
}

}  // namespace scribble::training
