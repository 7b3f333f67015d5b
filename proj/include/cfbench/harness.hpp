// Config-driven experiment runner: dataset construction, device-disjoint
// splits, detector training, attack campaigns, metric tables and
// transferability matrices, and CSV/Markdown reports.
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cfbench/attack.hpp"
#include "cfbench/core.hpp"
#include "cfbench/detector.hpp"
#include "cfbench/image.hpp"
#include "cfbench/manip.hpp"
#include "cfbench/spam.hpp"
#include "cfbench/toml.hpp"

namespace cfbench {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Configuration

struct AttackCampaign {
    std::string kind;    // fgsm | pgd | icm_cross | icm_restore | gan_restore
    std::string target;  // detector id the attack is crafted against
    AttackConfig cfg;
    RestorerHyper restorer;
    int max_patches = 0;  // 0 = every manipulated test patch
};

struct ExperimentConfig {
    DatasetSpec dataset;
    std::string source_dir;  // optional: load pristine images from dev*/ PGM dirs
    int train_devices = 6;
    int max_test_per_class = 1000;  // 0 = all
    SpamConfig spam;
    double cozz_temperature = 0.1;
    std::vector<ManipulationSpec> tasks;
    std::vector<std::string> detectors;
    std::vector<AttackCampaign> attacks;
    LinearTrainHyper linear_hyper;
    BayarTrainHyper bayar_hyper;
    std::uint64_t seed = 1;
    std::string out_dir = "out";

    std::string canonical_string() const;
    std::string fingerprint() const { return hex64(fnv1a64(canonical_string())); }
};

inline std::vector<DeviceSpec> default_devices(int n) {
    std::vector<DeviceSpec> out;
    for (int i = 0; i < n; ++i) {
        DeviceSpec d;
        d.device_id = i;
        d.noise_sigma = 1.0 + 0.35 * i;
        d.gamma = 0.85 + 0.04 * i;
        d.base_texture_scale = 1.5 + 0.5 * (i % 4);
        out.push_back(d);
    }
    return out;
}

inline std::string ExperimentConfig::canonical_string() const {
    std::ostringstream ss;
    ss.precision(17);
    ss << "seed=" << seed << ";train_devices=" << train_devices
       << ";max_test=" << max_test_per_class << ";src=" << source_dir << ";ds=";
    ss << dataset.images_per_device << "," << dataset.image_width << ","
       << dataset.image_height << "," << dataset.patch_size << "," << dataset.patch_stride
       << "," << dataset.patches_per_image << "," << dataset.seed;
    for (const auto& d : dataset.devices)
        ss << ";dev" << d.device_id << "=" << d.noise_sigma << "," << d.gamma << ","
           << d.base_texture_scale;
    ss << ";spam=" << spam.fingerprint() << ";tau=" << cozz_temperature;
    for (const auto& t : tasks) ss << ";task=" << t.name();
    for (const auto& d : detectors) ss << ";det=" << d;
    for (const auto& a : attacks)
        ss << ";atk=" << a.kind << ">" << a.target << ",eps=" << a.cfg.epsilon
           << ",steps=" << a.cfg.pgd_steps << ",alpha=" << a.cfg.pgd_alpha
           << ",T=" << a.cfg.distortion_T << ",sweeps=" << a.cfg.max_sweeps
           << ",seed=" << a.cfg.seed << ",n=" << a.max_patches;
    ss << ";lin=" << linear_hyper.epochs << "," << linear_hyper.lr << ","
       << linear_hyper.lambda << "," << linear_hyper.seed;
    ss << ";bay=" << bayar_hyper.epochs << "," << bayar_hyper.batch << ","
       << bayar_hyper.lr << "," << bayar_hyper.momentum << "," << bayar_hyper.lr_decay
       << "," << bayar_hyper.val_fraction << "," << bayar_hyper.max_train << ","
       << bayar_hyper.seed;
    return ss.str();
}

namespace harnessdetail {

inline ManipulationSpec parse_manipulation(const TomlTable& t) {
    ManipulationSpec m;
    std::string kind = t.get_string("kind", "");
    if (kind == "blur") {
        m.kind = ManipKind::Blur;
        m.sigma = t.get_double("sigma", 1.10);
        if (m.sigma <= 0) throw ConfigError("manipulation: sigma must be > 0");
    } else if (kind == "jpeg") {
        m.kind = ManipKind::Jpeg;
        m.quality = static_cast<int>(t.get_int("quality", 70));
        if (m.quality < 1 || m.quality > 100)
            throw ConfigError("manipulation: quality out of 1..100");
    } else if (kind == "median") {
        m.kind = ManipKind::Median;
        m.kernel = static_cast<int>(t.get_int("kernel", 7));
        if (m.kernel < 3 || m.kernel % 2 == 0)
            throw ConfigError("manipulation: kernel must be odd and >= 3");
    } else if (kind == "resize") {
        m.kind = ManipKind::Resize;
        m.scale = t.get_double("scale", 1.5);
        if (m.scale < 1.0) throw ConfigError("manipulation: scale must be >= 1");
    } else {
        throw ConfigError("manipulation: unknown kind '" + kind + "'");
    }
    return m;
}

}  // namespace harnessdetail

inline ExperimentConfig parse_experiment_config(const TomlTable& root) {
    ExperimentConfig cfg;
    if (const TomlTable* ds = root.table("dataset")) {
        int ndev = static_cast<int>(ds->get_int("devices", 9));
        if (ndev < 2) throw ConfigError("dataset: need at least 2 devices");
        cfg.dataset.devices = default_devices(ndev);
        cfg.dataset.images_per_device = static_cast<int>(ds->get_int("images_per_device", 15));
        cfg.dataset.image_width = static_cast<int>(ds->get_int("image_width", 256));
        cfg.dataset.image_height = static_cast<int>(ds->get_int("image_height", 256));
        cfg.dataset.patch_size = static_cast<int>(ds->get_int("patch_size", 64));
        cfg.dataset.patch_stride = static_cast<int>(ds->get_int("patch_stride", 32));
        cfg.dataset.patches_per_image =
            static_cast<int>(ds->get_int("patches_per_image", 192));
        cfg.dataset.seed = static_cast<std::uint64_t>(ds->get_int("seed", 1));
        cfg.source_dir = ds->get_string("source_dir", "");
        if (cfg.dataset.patch_stride > cfg.dataset.patch_size)
            throw ConfigError("dataset: stride must not exceed patch size");
        if (cfg.dataset.patches_per_image < 1)
            throw ConfigError("dataset: patches_per_image must be >= 1");
    } else {
        cfg.dataset.devices = default_devices(9);
    }
    if (const std::vector<TomlTable>* devs = root.array("device")) {
        for (const TomlTable& t : *devs) {
            int id = static_cast<int>(t.get_int("id", -1));
            if (id < 0 || id >= static_cast<int>(cfg.dataset.devices.size()))
                throw ConfigError("device: id out of range");
            DeviceSpec& d = cfg.dataset.devices[static_cast<std::size_t>(id)];
            d.noise_sigma = t.get_double("noise_sigma", d.noise_sigma);
            d.gamma = t.get_double("gamma", d.gamma);
            d.base_texture_scale = t.get_double("texture_scale", d.base_texture_scale);
            if (d.noise_sigma < 0 || d.gamma <= 0 || d.base_texture_scale < 1)
                throw ConfigError("device: invalid parameters");
        }
    }
    if (const TomlTable* sp = root.table("split")) {
        cfg.train_devices = static_cast<int>(sp->get_int("train_devices", 6));
        cfg.max_test_per_class = static_cast<int>(sp->get_int("max_test_per_class", 1000));
    }
    if (cfg.train_devices <= 0 ||
        cfg.train_devices >= static_cast<int>(cfg.dataset.devices.size()))
        throw ConfigError("split: train_devices must be in [1, device count)");
    if (const TomlTable* sp = root.table("spam")) {
        cfg.spam.q = sp->get_double("q", 3.0);
        cfg.spam.T = static_cast<int>(sp->get_int("T", 2));
        cfg.spam.cooc_order = static_cast<int>(sp->get_int("order", 4));
        cfg.spam.symmetrize = sp->get_bool("symmetrize", true);
        std::string norm = sp->get_string("normalization", "l2");
        if (norm == "l2")
            cfg.spam.normalization = FeatureNorm::L2;
        else if (norm == "l1")
            cfg.spam.normalization = FeatureNorm::L1;
        else if (norm == "none")
            cfg.spam.normalization = FeatureNorm::None;
        else
            throw ConfigError("spam: unknown normalization '" + norm + "'");
        if (cfg.spam.q <= 0 || cfg.spam.T < 1 || cfg.spam.cooc_order < 2)
            throw ConfigError("spam: invalid parameters");
        cfg.cozz_temperature = sp->get_double("temperature", 0.1);
    }
    if (const std::vector<TomlTable>* ms = root.array("manipulation")) {
        for (const TomlTable& t : *ms)
            cfg.tasks.push_back(harnessdetail::parse_manipulation(t));
    } else {
        cfg.tasks = standard_tasks();
    }
    if (const TomlTable* dt = root.table("detectors")) {
        for (const auto& [key, val] : dt->values) {
            (void)val;
            (void)key;
        }
    }
    if (root.has("detectors")) throw ConfigError("detectors must be a [detectors] table");
    if (const TomlTable* dt = root.table("detectors")) {
        std::string list = dt->get_string("use", "spam_linear,bayar_net");
        std::string cur;
        for (char c : list + ",") {
            if (c == ',') {
                if (!cur.empty()) cfg.detectors.push_back(cur);
                cur.clear();
            } else if (c != ' ') {
                cur += c;
            }
        }
        cfg.linear_hyper.epochs = static_cast<int>(dt->get_int("linear_epochs", 60));
        cfg.linear_hyper.lr = dt->get_double("linear_lr", 0.5);
        cfg.linear_hyper.lambda = dt->get_double("linear_lambda", 1e-4);
        cfg.bayar_hyper.epochs = static_cast<int>(dt->get_int("bayar_epochs", 6));
        cfg.bayar_hyper.batch = static_cast<int>(dt->get_int("bayar_batch", 32));
        cfg.bayar_hyper.lr = dt->get_double("bayar_lr", 0.01);
        cfg.bayar_hyper.momentum = dt->get_double("bayar_momentum", 0.9);
        cfg.bayar_hyper.lr_decay = dt->get_double("bayar_lr_decay", 0.7);
        cfg.bayar_hyper.max_train = static_cast<int>(dt->get_int("bayar_max_train", 0));
        cfg.bayar_hyper.verbose = dt->get_bool("bayar_verbose", false);
    } else {
        cfg.detectors = {"spam_linear", "bayar_net"};
    }
    for (const auto& d : cfg.detectors)
        if (d != "spam_linear" && d != "bayar_net" && d != "cozz_net_hard" &&
            d != "cozz_net_soft")
            throw ConfigError("unknown detector '" + d + "'");
    if (const std::vector<TomlTable>* at = root.array("attack")) {
        for (const TomlTable& t : *at) {
            AttackCampaign c;
            c.kind = t.get_string("kind", "fgsm");
            c.target = t.get_string("target", "bayar_net");
            c.cfg.epsilon = static_cast<int>(t.get_int("epsilon", 1));
            c.cfg.pgd_steps = static_cast<int>(t.get_int("steps", 10));
            c.cfg.pgd_alpha = static_cast<int>(t.get_int("alpha", 1));
            c.cfg.distortion_T = t.get_double("distortion_T", 6.5);
            c.cfg.max_sweeps = static_cast<int>(t.get_int("max_sweeps", 30));
            c.cfg.margin = t.get_double("margin", 0.0);
            c.cfg.seed = static_cast<std::uint64_t>(t.get_int("seed", 1));
            c.cfg.icm_mode = t.get_string("mode", "cross") == "restore"
                                 ? IcmMode::RestorePristine
                                 : IcmMode::CrossBoundary;
            c.max_patches = static_cast<int>(t.get_int("max_patches", 0));
            c.restorer.channels = static_cast<int>(t.get_int("gan_channels", 16));
            c.restorer.blocks = static_cast<int>(t.get_int("gan_blocks", 4));
            c.restorer.epochs = static_cast<int>(t.get_int("gan_epochs", 6));
            c.restorer.lr = t.get_double("gan_lr", 1e-3);
            c.restorer.lambda_adv = t.get_double("gan_lambda_adv", 1.0);
            c.restorer.lambda_pix = t.get_double("gan_lambda_pix", 10.0);
            c.restorer.lambda_feat = t.get_double("gan_lambda_feat", 1.0);
            c.restorer.detector_every = static_cast<int>(t.get_int("gan_detector_every", 0));
            c.restorer.seed = c.cfg.seed;
            if (c.kind != "fgsm" && c.kind != "pgd" && c.kind != "icm" &&
                c.kind != "gan_restore")
                throw ConfigError("attack: unknown kind '" + c.kind + "'");
            cfg.attacks.push_back(std::move(c));
        }
    }
    if (const TomlTable* rp = root.table("report")) {
        cfg.out_dir = rp->get_string("out_dir", "out");
    }
    if (root.table("experiment")) {
        cfg.seed = static_cast<std::uint64_t>(root.table("experiment")->get_int("seed", 1));
    }
    cfg.linear_hyper.seed = mix_seed({cfg.seed, 0x11AULL});
    cfg.bayar_hyper.seed = mix_seed({cfg.seed, 0xBA1ULL});
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    return parse_experiment_config(read_toml_file(path));
}

// ---------------------------------------------------------------------------
// Dataset construction

struct PatchDataset {
    std::vector<ImagePatch> patches;
    std::vector<int> device_ids;
};

// Pristine patches for every device, deterministic in (spec, seed). Images
// are either synthesized per device or read from <source_dir>/dev<k>/*.pgm.
inline PatchDataset build_pristine_patches(const ExperimentConfig& cfg) {
    PatchDataset out;
    const DatasetSpec& ds = cfg.dataset;
    if (!cfg.source_dir.empty()) {
        namespace fs = std::filesystem;
        for (const DeviceSpec& dev : ds.devices) {
            fs::path dir = fs::path(cfg.source_dir) / ("dev" + std::to_string(dev.device_id));
            if (!fs::is_directory(dir))
                throw ConfigError("source_dir: missing directory " + dir.string());
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(dir))
                if (e.path().extension() == ".pgm") files.push_back(e.path());
            std::sort(files.begin(), files.end());
            for (const auto& f : files) {
                ImagePatch img = read_pgm(f.string());
                auto ps = extract_patches(img, ds.patch_size, ds.patch_stride,
                                          static_cast<std::size_t>(ds.patches_per_image));
                for (auto& p : ps) {
                    out.patches.push_back(std::move(p));
                    out.device_ids.push_back(dev.device_id);
                }
            }
        }
        return out;
    }
    for (const DeviceSpec& dev : ds.devices) {
        for (int i = 0; i < ds.images_per_device; ++i) {
            std::uint64_t img_seed =
                mix_seed({ds.seed, static_cast<std::uint64_t>(dev.device_id) + 1,
                          static_cast<std::uint64_t>(i) + 1});
            ImagePatch img =
                generate_synthetic_image(dev, ds.image_width, ds.image_height, img_seed);
            auto ps = extract_patches(img, ds.patch_size, ds.patch_stride,
                                      static_cast<std::size_t>(ds.patches_per_image));
            for (auto& p : ps) {
                out.patches.push_back(std::move(p));
                out.device_ids.push_back(dev.device_id);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Device-disjoint split

struct DeviceSplit {
    std::vector<int> train_devices;
    std::vector<int> test_devices;
};

inline DeviceSplit split_by_device(const std::vector<DeviceSpec>& devices, int train_count,
                                   std::uint64_t seed) {
    if (train_count <= 0 || train_count >= static_cast<int>(devices.size()))
        throw std::invalid_argument("split_by_device: train_count out of range");
    std::vector<int> ids;
    for (const auto& d : devices) ids.push_back(d.device_id);
    Rng rng(mix_seed({seed, 0x5B117ULL}));
    rng.shuffle(ids);
    DeviceSplit s;
    s.train_devices.assign(ids.begin(), ids.begin() + train_count);
    s.test_devices.assign(ids.begin() + train_count, ids.end());
    return s;
}

// Balanced pristine/manipulated sets for one task. Every pristine patch
// pairs with its manipulated version; classes are exactly balanced.
struct TaskSets {
    TrainSet train;
    TrainSet test;
};

inline TaskSets make_task_sets(const PatchDataset& data, const DeviceSplit& split,
                               const ManipulationSpec& task, int max_test_per_class,
                               std::uint64_t seed) {
    std::set<int> train_dev(split.train_devices.begin(), split.train_devices.end());
    std::set<int> test_dev(split.test_devices.begin(), split.test_devices.end());
    for (int d : train_dev)
        if (test_dev.count(d)) throw std::logic_error("device leak across the split");

    TaskSets out;
    std::vector<std::size_t> test_indices;
    for (std::size_t i = 0; i < data.patches.size(); ++i) {
        if (train_dev.count(data.device_ids[i])) {
            out.train.patches.push_back(data.patches[i]);
            out.train.labels.push_back(0);
            out.train.device_ids.push_back(data.device_ids[i]);
        } else {
            test_indices.push_back(i);
        }
    }
    if (max_test_per_class > 0 &&
        test_indices.size() > static_cast<std::size_t>(max_test_per_class)) {
        Rng rng(mix_seed({seed, 0x7E57ULL}));
        rng.shuffle(test_indices);
        test_indices.resize(static_cast<std::size_t>(max_test_per_class));
    }
    for (std::size_t i : test_indices) {
        out.test.patches.push_back(data.patches[i]);
        out.test.labels.push_back(0);
        out.test.device_ids.push_back(data.device_ids[i]);
    }
    auto add_manipulated = [&](TrainSet& set) {
        const std::size_t n = set.patches.size();
        for (std::size_t i = 0; i < n; ++i) set.patches.push_back(ImagePatch{});
        set.labels.resize(2 * n, 1);
        set.device_ids.resize(2 * n);
        parallel_chunks(n, 8, [&](std::size_t, std::size_t b0, std::size_t e0) {
            for (std::size_t i = b0; i < e0; ++i) {
                set.patches[n + i] = apply_manipulation(set.patches[i], task);
                set.device_ids[n + i] = set.device_ids[i];
            }
        });
    };
    add_manipulated(out.train);
    add_manipulated(out.test);
    return out;
}

// ---------------------------------------------------------------------------
// Training dispatch

inline DetectorModel train_detector(const std::string& kind, const TrainSet& train,
                                    const ExperimentConfig& cfg) {
    if (kind == "spam_linear") return train_spam_linear(train, cfg.spam, cfg.linear_hyper);
    if (kind == "bayar_net") return train_bayar(train, cfg.bayar_hyper);
    if (kind == "cozz_net_hard" || kind == "cozz_net_soft") {
        SpamConfig l1 = cfg.spam;
        l1.normalization = FeatureNorm::L1;
        DetectorModel lin = train_spam_linear(train, l1, cfg.linear_hyper);
        DetectorModel d = build_cozznet(std::get<LinearModel>(lin.payload),
                                        kind == "cozz_net_hard", cfg.cozz_temperature);
        return d;
    }
    throw ConfigError("unknown detector kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Evaluation

struct MetricsRow {
    std::string task;
    std::string detector;
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
    double fpr() const { return 100.0 * static_cast<double>(fp) / static_cast<double>(fp + tn); }
    double tpr() const { return 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn); }
    double acc() const {
        return 100.0 * static_cast<double>(tp + tn) /
               static_cast<double>(tp + tn + fp + fn);
    }
};

inline MetricsRow evaluate_detector(const DetectorModel& model, const TrainSet& test,
                                    const std::string& task_name) {
    MetricsRow row;
    row.task = task_name;
    row.detector = model.id;
    int pos = 0, neg = 0;
    for (int l : test.labels) (l > 0 ? pos : neg)++;
    if (pos == 0 || neg == 0)
        throw std::invalid_argument("evaluate: test set must contain both classes");
    std::vector<int> pred(test.patches.size());
    parallel_chunks(test.patches.size(), 8, [&](std::size_t, std::size_t b0, std::size_t e0) {
        for (std::size_t i = b0; i < e0; ++i)
            pred[i] = detector_label(model, test.patches[i]) ? 1 : 0;
    });
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (test.labels[i] > 0)
            pred[i] ? ++row.tp : ++row.fn;
        else
            pred[i] ? ++row.fp : ++row.tn;
    }
    return row;
}

// ---------------------------------------------------------------------------
// Attack campaigns and transferability

struct TransferCell {
    std::string target;
    std::string evaluator;
    std::string task;
    double tpr_under_attack = 0.0;
};

struct AttackLogEntry {
    std::string task, target, kind;
    std::size_t patch_index = 0;
    bool success = false;
    double psnr_db = 0.0;
    int sweeps_or_steps = 0;
};

// Crafts adversarial versions of the manipulated test patches against the
// target detector. Returns the adversarial patches (cached bytes shared by
// all evaluators) plus per-patch logs.
struct CampaignOutput {
    std::vector<ImagePatch> adversarial;
    std::vector<std::size_t> source_indices;  // into test.patches
    std::vector<AttackLogEntry> log;
    std::vector<std::uint64_t> hashes;
    std::optional<Restorer> restorer;  // gan_restore keeps its generator
};

inline std::uint64_t patch_hash(const ImagePatch& p) {
    std::uint64_t h = fnv1a64(&p.width, sizeof p.width);
    h = fnv1a64(&p.height, sizeof p.height, h);
    return fnv1a64(p.pixels.data(), p.pixels.size(), h);
}

inline CampaignOutput run_campaign(const AttackCampaign& campaign,
                                   const DetectorModel& target_model, const TaskSets& sets,
                                   const std::string& task_name, const SpamConfig& spam_cfg) {
    CampaignOutput out;
    std::vector<std::size_t> manip_idx;
    for (std::size_t i = 0; i < sets.test.patches.size(); ++i)
        if (sets.test.labels[i] > 0) manip_idx.push_back(i);
    if (campaign.max_patches > 0 &&
        manip_idx.size() > static_cast<std::size_t>(campaign.max_patches))
        manip_idx.resize(static_cast<std::size_t>(campaign.max_patches));

    if (campaign.kind == "gan_restore") {
        // train on the *training* pairs, restore the test patches
        std::vector<std::pair<ImagePatch, ImagePatch>> pairs;
        const std::size_t half = sets.train.patches.size() / 2;
        for (std::size_t i = 0; i < half; ++i)
            pairs.emplace_back(sets.train.patches[half + i], sets.train.patches[i]);
        RestorerHyper hyper = campaign.restorer;
        Restorer g = train_restorer(target_model, pairs, hyper);
        for (std::size_t i : manip_idx) {
            ImagePatch adv = restore(g, sets.test.patches[i]);
            AttackLogEntry e;
            e.task = task_name;
            e.target = campaign.target;
            e.kind = campaign.kind;
            e.patch_index = i;
            e.success = !(score_detector(target_model, adv) > target_model.threshold);
            auto p = psnr(adv, sets.test.patches[i]);
            e.psnr_db = p ? *p : std::numeric_limits<double>::infinity();
            e.sweeps_or_steps = hyper.epochs;
            out.log.push_back(e);
            out.hashes.push_back(patch_hash(adv));
            out.adversarial.push_back(std::move(adv));
            out.source_indices.push_back(i);
        }
        out.restorer = std::move(g);
        return out;
    }

    out.adversarial.resize(manip_idx.size());
    out.log.resize(manip_idx.size());
    out.hashes.resize(manip_idx.size());
    out.source_indices = manip_idx;
    std::optional<SpamFeature> no_target;
    parallel_chunks(manip_idx.size(), 4, [&](std::size_t, std::size_t b0, std::size_t e0) {
        for (std::size_t k = b0; k < e0; ++k) {
            std::size_t i = manip_idx[k];
            const ImagePatch& x0 = sets.test.patches[i];
            AttackResult r;
            if (campaign.kind == "fgsm") {
                r = fgsm(target_model, x0, campaign.cfg.epsilon);
            } else if (campaign.kind == "pgd") {
                r = pgd(target_model, x0, campaign.cfg.epsilon, campaign.cfg.pgd_steps,
                        campaign.cfg.pgd_alpha);
            } else if (campaign.kind == "icm") {
                AttackConfig c = campaign.cfg;
                c.seed = mix_seed({campaign.cfg.seed, static_cast<std::uint64_t>(i)});
                if (c.icm_mode == IcmMode::RestorePristine) {
                    // the paired pristine patch sits half a set earlier
                    const std::size_t half = sets.test.patches.size() / 2;
                    SpamFeature ft = extract_spam(sets.test.patches[i - half], spam_cfg);
                    r = icm_attack(target_model, x0, ft, c);
                } else {
                    r = icm_attack(target_model, x0, no_target, c);
                }
            } else {
                throw ConfigError("unknown attack kind '" + campaign.kind + "'");
            }
            AttackLogEntry e;
            e.task = task_name;
            e.target = campaign.target;
            e.kind = campaign.kind;
            e.patch_index = i;
            e.success = r.success;
            e.psnr_db = r.psnr_db;
            e.sweeps_or_steps = r.sweeps_or_steps;
            out.log[k] = e;
            out.hashes[k] = patch_hash(r.adversarial);
            out.adversarial[k] = std::move(r.adversarial);
        }
    });
    return out;
}

// Scores the cached adversarial bytes with an evaluator; the hash check
// asserts every evaluator sees exactly what the target produced.
inline TransferCell evaluate_transfer(const CampaignOutput& campaign,
                                      const DetectorModel& evaluator,
                                      const std::string& target_id,
                                      const std::string& task_name) {
    TransferCell cell;
    cell.target = target_id;
    cell.evaluator = evaluator.id;
    cell.task = task_name;
    if (campaign.adversarial.empty()) return cell;
    std::vector<int> hits(campaign.adversarial.size(), 0);
    parallel_chunks(campaign.adversarial.size(), 8,
                    [&](std::size_t, std::size_t b0, std::size_t e0) {
                        for (std::size_t i = b0; i < e0; ++i) {
                            if (patch_hash(campaign.adversarial[i]) != campaign.hashes[i])
                                throw std::logic_error("adversarial bytes changed");
                            hits[i] = detector_label(evaluator, campaign.adversarial[i]) ? 1 : 0;
                        }
                    });
    std::size_t detected = 0;
    for (int h : hits) detected += static_cast<std::size_t>(h);
    cell.tpr_under_attack =
        100.0 * static_cast<double>(detected) / static_cast<double>(hits.size());
    return cell;
}

// ---------------------------------------------------------------------------
// Reports

struct ExperimentReport {
    std::vector<MetricsRow> rows;
    std::vector<TransferCell> cells;
    std::vector<AttackLogEntry> attack_log;
    std::string fingerprint;
    std::uint64_t seed = 0;
};

namespace reportdetail {

inline std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace reportdetail

inline std::string metrics_csv(const ExperimentReport& r) {
    std::string s = "# config_fingerprint=" + r.fingerprint +
                    " seed=" + std::to_string(r.seed) + "\n";
    s += "task,detector,fpr,tpr,acc\n";
    for (const auto& row : r.rows)
        s += row.task + "," + row.detector + "," + reportdetail::fmt2(row.fpr()) + "," +
             reportdetail::fmt2(row.tpr()) + "," + reportdetail::fmt2(row.acc()) + "\n";
    return s;
}

inline std::string transfer_csv(const ExperimentReport& r) {
    std::string s = "# config_fingerprint=" + r.fingerprint +
                    " seed=" + std::to_string(r.seed) + "\n";
    s += "target,evaluator,task,tpr_under_attack\n";
    for (const auto& c : r.cells)
        s += c.target + "," + c.evaluator + "," + c.task + "," +
             reportdetail::fmt2(c.tpr_under_attack) + "\n";
    return s;
}

inline std::string report_markdown(const ExperimentReport& r) {
    std::ostringstream md;
    md << "# Detection and attack report\n\n";
    md << "config fingerprint `" << r.fingerprint << "`, seed " << r.seed << "\n\n";

    std::vector<std::string> detectors, tasks;
    for (const auto& row : r.rows) {
        if (std::find(detectors.begin(), detectors.end(), row.detector) == detectors.end())
            detectors.push_back(row.detector);
        if (std::find(tasks.begin(), tasks.end(), row.task) == tasks.end())
            tasks.push_back(row.task);
    }
    if (!r.rows.empty()) {
        md << "## Detection performance\n\n";
        md << "| Task |";
        for (const auto& d : detectors) md << " " << d << " FPR | TPR | ACC |";
        md << "\n|---|";
        for (std::size_t i = 0; i < detectors.size(); ++i) md << "---|---|---|";
        md << "\n";
        for (const auto& t : tasks) {
            md << "| " << t << " |";
            for (const auto& d : detectors) {
                const MetricsRow* found = nullptr;
                for (const auto& row : r.rows)
                    if (row.task == t && row.detector == d) found = &row;
                if (found)
                    md << " " << reportdetail::fmt2(found->fpr()) << " | "
                       << reportdetail::fmt2(found->tpr()) << " | "
                       << reportdetail::fmt2(found->acc()) << " |";
                else
                    md << " - | - | - |";
            }
            md << "\n";
        }
        md << "\n";
    }
    if (!r.cells.empty()) {
        std::vector<std::string> targets;
        for (const auto& c : r.cells)
            if (std::find(targets.begin(), targets.end(), c.target) == targets.end())
                targets.push_back(c.target);
        for (const auto& tgt : targets) {
            md << "## TPR under attack, target: " << tgt << "\n\n";
            std::vector<std::string> evals, atasks;
            for (const auto& c : r.cells) {
                if (c.target != tgt) continue;
                if (std::find(evals.begin(), evals.end(), c.evaluator) == evals.end())
                    evals.push_back(c.evaluator);
                if (std::find(atasks.begin(), atasks.end(), c.task) == atasks.end())
                    atasks.push_back(c.task);
            }
            md << "| Task |";
            for (const auto& e : evals) md << " " << e << " |";
            md << "\n|---|";
            for (std::size_t i = 0; i < evals.size(); ++i) md << "---|";
            md << "\n";
            for (const auto& t : atasks) {
                md << "| " << t << " |";
                for (const auto& e : evals) {
                    const TransferCell* found = nullptr;
                    for (const auto& c : r.cells)
                        if (c.target == tgt && c.evaluator == e && c.task == t) found = &c;
                    md << " " << (found ? reportdetail::fmt2(found->tpr_under_attack) : "-")
                       << " |";
                }
                md << "\n";
            }
            md << "\n";
        }
    }
    return md.str();
}

inline std::string attack_log_jsonl(const ExperimentReport& r);

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Full pipeline: dataset -> split -> train -> evaluate -> attack -> report.
// A pure function of the config (determinism is part of the contract).

inline ExperimentReport run_experiment(const ExperimentConfig& cfg, bool verbose = false) {
    ExperimentReport report;
    report.fingerprint = cfg.fingerprint();
    report.seed = cfg.seed;

    PatchDataset data = build_pristine_patches(cfg);
    DeviceSplit split = split_by_device(cfg.dataset.devices, cfg.train_devices, cfg.seed);

    for (const ManipulationSpec& task : cfg.tasks) {
        const std::string task_name = task.name();
        TaskSets sets = make_task_sets(data, split, task, cfg.max_test_per_class,
                                       mix_seed({cfg.seed, fnv1a64(task_name)}));
        if (verbose)
            std::fprintf(stderr, "[%s] train %zu test %zu\n", task_name.c_str(),
                         sets.train.patches.size(), sets.test.patches.size());
        std::map<std::string, DetectorModel> models;
        for (const std::string& kind : cfg.detectors) {
            models.emplace(kind, train_detector(kind, sets.train, cfg));
            report.rows.push_back(evaluate_detector(models.at(kind), sets.test, task_name));
            if (verbose) {
                const auto& row = report.rows.back();
                std::fprintf(stderr, "[%s] %s fpr %.2f tpr %.2f acc %.2f\n",
                             task_name.c_str(), kind.c_str(), row.fpr(), row.tpr(),
                             row.acc());
            }
        }
        for (const AttackCampaign& campaign : cfg.attacks) {
            auto it = models.find(campaign.target);
            if (it == models.end())
                throw ConfigError("attack targets undeclared detector '" + campaign.target +
                                  "'");
            CampaignOutput out =
                run_campaign(campaign, it->second, sets, task_name, cfg.spam);
            for (const auto& [kind, model] : models)
                report.cells.push_back(
                    evaluate_transfer(out, model, campaign.target, task_name));
            report.attack_log.insert(report.attack_log.end(), out.log.begin(),
                                     out.log.end());
            if (verbose && !out.log.empty()) {
                std::size_t ok = 0;
                for (const auto& e : out.log) ok += e.success ? 1 : 0;
                std::fprintf(stderr, "[%s] %s vs %s: %zu/%zu flipped\n", task_name.c_str(),
                             campaign.kind.c_str(), campaign.target.c_str(), ok,
                             out.log.size());
            }
        }
    }
    return report;
}

inline void emit_report(const ExperimentReport& report, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    write_text_file((fs::path(dir) / "metrics.csv").string(), metrics_csv(report));
    write_text_file((fs::path(dir) / "transfer.csv").string(), transfer_csv(report));
    write_text_file((fs::path(dir) / "report.md").string(), report_markdown(report));
    if (!report.attack_log.empty())
        write_text_file((fs::path(dir) / "attacks.jsonl").string(),
                        attack_log_jsonl(report));
}

}  // namespace cfbench
