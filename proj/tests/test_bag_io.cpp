#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "emmpd/bag.hpp"
#include "emmpd/checkpoint.hpp"
#include "emmpd/rng.hpp"

using namespace emmpd;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("emmpd_bagio_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

PatchBag make_bag(Rng& rng, int n, int d) {
    PatchBag bag;
    bag.patient_id = "patient_007";
    bag.d = d;
    bag.num_slides = 2;
    bag.embeddings = Matrix(n, d);
    for (int i = 0; i < n; ++i) {
        bag.coords.push_back({static_cast<std::uint16_t>(i % 2), i / 2, i % 7});
        for (int j = 0; j < d; ++j)
            bag.embeddings.at(i, j) = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    return bag;
}

}  // namespace

TEST_CASE("bag round-trips exactly through the binary format") {
    const fs::path dir = temp_dir("roundtrip");
    Rng rng(61);
    PatchBag bag = make_bag(rng, 23, 12);
    // The reader derives the patient id from the file stem.
    const fs::path path = dir / "patient_007.empd";
    write_bag(bag, path);
    PatchBag back = read_bag(path, 12);
    CHECK(back.patient_id == bag.patient_id);
    CHECK(back.d == bag.d);
    CHECK(back.num_slides == bag.num_slides);
    REQUIRE(back.n() == bag.n());
    for (int i = 0; i < bag.n(); ++i) {
        CHECK(back.coords[i].slide == bag.coords[i].slide);
        CHECK(back.coords[i].gx == bag.coords[i].gx);
        CHECK(back.coords[i].gy == bag.coords[i].gy);
    }
    CHECK(back.embeddings.data == bag.embeddings.data);  // float-representable
    fs::remove_all(dir);
}

TEST_CASE("bag validation rejects duplicate coordinates") {
    Rng rng(62);
    PatchBag bag = make_bag(rng, 6, 4);
    bag.coords[5] = bag.coords[0];
    CHECK_THROWS_AS(bag.validate(), IoError);
}

TEST_CASE("reader distinguishes the failure modes") {
    const fs::path dir = temp_dir("errors");
    Rng rng(63);
    PatchBag bag = make_bag(rng, 9, 6);
    const fs::path good = dir / "good.bin";
    write_bag(bag, good);

    SUBCASE("missing file") {
        try {
            read_bag(dir / "nope.bin");
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.code == IoError::Code::NotFound);
        }
    }
    SUBCASE("bad magic") {
        const fs::path junk = dir / "junk.bin";
        std::ofstream(junk) << "this is not a bag file, not even close";
        try {
            read_bag(junk);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.code == IoError::Code::BadMagic);
        }
    }
    SUBCASE("truncated payload") {
        const fs::path cut = dir / "cut.bin";
        fs::copy_file(good, cut);
        fs::resize_file(cut, fs::file_size(good) - 40);
        CHECK_THROWS_AS(read_bag(cut), IoError);
    }
    SUBCASE("dimension mismatch") {
        try {
            read_bag(good, 7);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.code == IoError::Code::DimMismatch);
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("text bank round-trip with deterministic learnable rows") {
    const fs::path dir = temp_dir("bank");
    Rng rng(64);
    const int c = 3, d = 10, t = 4;
    Matrix frozen(c, d);
    for (auto& v : frozen.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    const fs::path path = dir / "bank.bin";
    write_text_bank(frozen, path);

    TextBank a = load_text_bank(path, t, 123, c);
    CHECK(a.c == c);
    CHECK(a.d == d);
    CHECK(a.t == t);
    CHECK(a.frozen.data == frozen.data);
    REQUIRE(a.learnable_init.rows == t);
    for (double v : a.learnable_init.data) CHECK(std::abs(v) <= 0.02);

    TextBank b = load_text_bank(path, t, 123, c);
    CHECK(a.learnable_init.data == b.learnable_init.data);
    TextBank other = load_text_bank(path, t, 124, c);
    CHECK(a.learnable_init.data != other.learnable_init.data);

    try {
        load_text_bank(path, t, 123, c + 1);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(e.code == IoError::Code::ClassMismatch);
    }
    fs::remove_all(dir);
}

TEST_CASE("manifest round-trips entries, splits and task mode") {
    const fs::path dir = temp_dir("manifest");
    DatasetManifest m;
    m.d = 16;
    m.c = 2;
    m.t = 3;
    m.task_mode = TaskMode::Multiclass;
    m.class_names = {"benign", "tumor"};
    m.text_bank_path = "bank.bin";
    m.train.push_back({"bags/a.bin", "a", {1, 0}});
    m.train.push_back({"bags/b.bin", "b", {0, 1}});
    m.val.push_back({"bags/c.bin", "c", {0, 1}});
    m.test.push_back({"bags/d.bin", "d", {1, 0}});
    const fs::path path = dir / "manifest.txt";
    write_manifest(m, path);

    DatasetManifest back = read_manifest(path);
    CHECK(back.d == m.d);
    CHECK(back.c == m.c);
    CHECK(back.t == m.t);
    CHECK(back.task_mode == TaskMode::Multiclass);
    CHECK(back.class_names == m.class_names);
    CHECK(back.text_bank_path == m.text_bank_path);
    REQUIRE(back.train.size() == 2);
    CHECK(back.train[1].patient_id == "b");
    CHECK(back.train[1].label == std::vector<int>{0, 1});
    CHECK(back.val.size() == 1);
    CHECK(back.test.size() == 1);
    CHECK(back.base_dir == path.parent_path());
    CHECK(back.resolve("bags/a.bin") == dir / "bags/a.bin");
    fs::remove_all(dir);
}

TEST_CASE("task mode names round-trip and reject junk") {
    CHECK(task_mode_from_name(task_mode_name(TaskMode::Multilabel)) == TaskMode::Multilabel);
    CHECK(task_mode_from_name(task_mode_name(TaskMode::Multiclass)) == TaskMode::Multiclass);
    CHECK_THROWS_AS(task_mode_from_name("sorta-multi"), ConfigError);
}

TEST_CASE("checkpoint round-trips every parameter bit-exactly") {
    const fs::path dir = temp_dir("ckpt");
    const int d = 12, c = 3;
    TrainConfig cfg;
    cfg.t = 2;
    cfg.heads = 2;
    cfg.top_k = 24;
    cfg.seed = 0xdeadbeefcafe1234ULL;
    cfg.fusion_mode = FusionMode::Cat;
    cfg.sampling = SamplingMode::Random;
    cfg.use_gcn = false;

    ModelConfig mc;
    mc.d = d;
    mc.c = c;
    mc.t = cfg.t;
    mc.heads = cfg.heads;
    mc.k_nn = cfg.k_nn;
    mc.use_gcn = cfg.use_gcn;
    mc.use_text = cfg.use_text;
    mc.fusion_mode = cfg.fusion_mode;

    Rng rng(65);
    Matrix prompt_init(cfg.t, d);
    prompt_init.fill_uniform(rng, -0.02, 0.02);

    TrainResult r;
    r.selector = SelectorParams(d, cfg.selector_hidden, c, 42);
    r.fusion = FusionParams(mc, prompt_init, 43);
    r.best_epoch = 7;
    r.best_val_loss = 0.125;
    r.best_val_f1 = 0.75;
    r.selector_trained = true;

    const fs::path path = dir / "model.ckpt";
    save_checkpoint(r, cfg, d, c, path);
    LoadedCheckpoint lc = load_checkpoint(path);

    CHECK(lc.d == d);
    CHECK(lc.c == c);
    CHECK(lc.config.seed == cfg.seed);
    CHECK(lc.config.top_k == cfg.top_k);
    CHECK(lc.config.fusion_mode == FusionMode::Cat);
    CHECK(lc.config.sampling == SamplingMode::Random);
    CHECK(lc.config.use_gcn == cfg.use_gcn);
    CHECK(lc.result.selector_trained);

    auto originals = r.fusion.all_params();
    auto loaded = lc.result.fusion.all_params();
    REQUIRE(originals.size() == loaded.size());
    for (size_t i = 0; i < originals.size(); ++i) {
        CHECK(loaded[i]->name == originals[i]->name);
        CHECK(loaded[i]->value.data == originals[i]->value.data);
    }
    auto sel_orig = r.selector.trainable();
    auto sel_load = lc.result.selector.trainable();
    REQUIRE(sel_orig.size() == sel_load.size());
    for (size_t i = 0; i < sel_orig.size(); ++i)
        CHECK(sel_load[i]->value.data == sel_orig[i]->value.data);

    SUBCASE("bad magic") {
        const fs::path junk = dir / "junk.ckpt";
        std::ofstream(junk) << "not a checkpoint at all, sorry";
        try {
            load_checkpoint(junk);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.code == IoError::Code::BadMagic);
        }
    }
    SUBCASE("truncated") {
        const fs::path cut = dir / "cut.ckpt";
        fs::copy_file(path, cut);
        fs::resize_file(cut, fs::file_size(path) / 2);
        CHECK_THROWS_AS(load_checkpoint(cut), IoError);
    }
    fs::remove_all(dir);
}
