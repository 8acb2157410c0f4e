#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dgtl/checkpoint.hpp"
#include "dgtl/dataset.hpp"
#include "dgtl/run_config.hpp"

using namespace dgtl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("dgtl_io_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(KeyValues, ParsesCommentsAndWhitespace) {
    std::istringstream in("# run\n  epochs = 12  \nfusion=cat # inline\n\nspec_layers = 8, 4\ncoarse_dim = none\n");
    auto kv = KeyValues::parse(in);
    int epochs = 0;
    std::string fusion;
    std::vector<int> layers;
    kv.read("epochs", epochs);
    kv.read("fusion", fusion);
    kv.read("spec_layers", layers);
    EXPECT_EQ(epochs, 12);
    EXPECT_EQ(fusion, "cat");
    EXPECT_EQ(layers, (std::vector<int>{8, 4}));
    EXPECT_THROW(kv.require_all_used(), ConfigError);  // coarse_dim never read
}

TEST(KeyValues, BadValuesAndLinesAreConfigErrors) {
    std::istringstream no_eq("epochs 12\n");
    EXPECT_THROW(KeyValues::parse(no_eq), ConfigError);
    KeyValues kv;
    kv.set("epochs", "twelve");
    int epochs = 0;
    EXPECT_THROW(kv.read("epochs", epochs), ConfigError);
    kv.set("flag", "maybe");
    bool flag = false;
    EXPECT_THROW(kv.read("flag", flag), ConfigError);
    EXPECT_THROW(KeyValues::load("/nonexistent/run.cfg"), IOError);
}

TEST(RunConfig, UnknownKeyIsConfigError) {
    KeyValues kv;
    kv.set("epochz", "3");
    EXPECT_THROW(RunConfig::from(kv), ConfigError);
}

TEST(RunConfig, EchoRoundTripsExactly) {
    RunConfig c;
    c.train.learning_rate = 0.1 + 0.2;  // not representable in few digits
    c.train.loss.arrangement = Arrangement::c2f;
    c.train.embedder.fusion = Fusion::Concat;
    c.train.embedder.coarse_dim = 7;
    c.train.embedder.pool_fine = {PoolKind::GeM, 2.5};
    c.train.embedder.pool_coarse = {PoolKind::GeM, 2.5};
    c.synthetic.noise_scale = 1.0 / 3.0;
    c.mc_grid = {0.25, 0.5};
    c.train.sampler.seed = 0xFFFFFFFFFFFFFFFFull;
    const auto back = RunConfig::from(KeyValues::from(c.to_kv()));
    EXPECT_EQ(back.to_text(), c.to_text());
    EXPECT_EQ(back.train.learning_rate, c.train.learning_rate);
    EXPECT_EQ(back.synthetic.noise_scale, c.synthetic.noise_scale);
    EXPECT_EQ(back.train.sampler.seed, c.train.sampler.seed);
    EXPECT_EQ(back.train.embedder.pool_fine, c.train.embedder.pool_fine);
}

TEST(RunConfig, ResolveSharesIdentityCountAndShape) {
    RunConfig c;
    c.train.embedder.num_identities = 5;
    c.train.embedder.input_shape = {2, 3, 1};
    c.resolve();
    EXPECT_EQ(c.synthetic.num_identities, 5);
    EXPECT_EQ(c.synthetic.input_shape.size(), 6);
    c.override_seeds(99);
    EXPECT_EQ(c.train.sampler.seed, 99u);
    EXPECT_EQ(c.train.embedder.seed, 99u);
    EXPECT_EQ(c.synthetic.seed, 99u);
}

TEST(Synthetic, CountsAndLayout) {
    const auto d = generate_synthetic(SyntheticSpec{});
    EXPECT_EQ(d.index().size(), 512u);
    EXPECT_EQ(d.samples().front().data.size(), 144u);
    const auto& s = d.samples()[8];  // first thermal draw of identity 0
    EXPECT_EQ(s.identity, 0);
    EXPECT_EQ(s.modality, Modality::Thermal);
    EXPECT_EQ(d.samples()[16].identity, 1);
}

TEST(Synthetic, NoNoiseNoOffsetMakesIdentitiesConstant) {
    SyntheticSpec spec;
    spec.noise_scale = 0;
    spec.modality_offset_scale = 0;
    const auto d = generate_synthetic(spec);
    for (const auto& s : d.samples()) EXPECT_EQ(s.data, d.samples()[16 * s.identity].data);
    EXPECT_NE(d.samples()[0].data, d.samples()[16].data);
}

TEST(Synthetic, InvalidScalesAreConfigErrors) {
    SyntheticSpec spec;
    spec.noise_scale = spec.identity_scale;
    EXPECT_THROW(generate_synthetic(spec), ConfigError);
}

TEST(Dataset, SaveLoadIsExactAndByteStable) {
    SyntheticSpec spec;
    spec.num_identities = 4;
    spec.samples_per_identity = 3;
    const auto d = generate_synthetic(spec);
    const auto a = scratch("a");
    const auto b = scratch("b");
    d.save(a);
    generate_synthetic(spec).save(b);
    EXPECT_EQ(slurp(a / "samples.csv"), slurp(b / "samples.csv"));
    EXPECT_EQ(slurp(a / "index.csv"), slurp(b / "index.csv"));
    const auto back = Dataset::load(a);
    ASSERT_EQ(back.samples().size(), d.samples().size());
    for (std::size_t i = 0; i < d.samples().size(); ++i) EXPECT_EQ(back.samples()[i].data, d.samples()[i].data);
    EXPECT_EQ(back.index().entries(), d.index().entries());
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Dataset, LoadErrors) {
    const auto dir = scratch("bad");
    EXPECT_THROW(Dataset::load(dir), IOError);
    fs::create_directories(dir);
    std::ofstream(dir / "index.csv") << "sample_id,identity,modality\n0,0,V\n1,0,T\n";
    std::ofstream(dir / "samples.csv") << "sample_id,1x1x2\n0,1.0,2.0\n1,1.0,oops\n";
    try {
        Dataset::load(dir);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.row(), 3);
        EXPECT_EQ(e.column(), 3);
    }
    std::ofstream(dir / "samples.csv") << "sample_id,1x1x2\n0,1.0,2.0\n";
    EXPECT_THROW(Dataset::load(dir), DataError);
    fs::remove_all(dir);
}

TEST(Holdout, SplitsLastEntriesOfEachGroup) {
    SyntheticSpec spec;
    spec.num_identities = 3;
    spec.samples_per_identity = 4;
    const auto d = generate_synthetic(spec);
    const auto [train, test] = split_holdout(d.index(), 1);
    EXPECT_EQ(train.size(), 18u);
    EXPECT_EQ(test.size(), 6u);
    EXPECT_EQ(test.entries()[0].sample_id, 3);
    EXPECT_EQ(test.entries()[1].sample_id, 7);
    EXPECT_THROW(split_holdout(d.index(), 4), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    EmbedderConfig cfg;
    cfg.feature_dim = 6;
    cfg.coarse_dim = 4;
    cfg.fusion = Fusion::Concat;
    cfg.num_identities = 5;
    cfg.pool_coarse = {PoolKind::GeM, 1.0 / 3.0};
    Embedder model(cfg);
    model.mutable_parameters().bn_fine.running_var(2) = 1e-310;  // subnormal survives too
    model.mutable_parameters().shared[0].weight(0, 0) = -0.0;
    const auto path = (fs::temp_directory_path() / "dgtl_io_model.ckpt").string();
    save_model(path, model);
    const Embedder back = load_model(path);
    EXPECT_TRUE(back.parameters() == model.parameters());
    EXPECT_TRUE(std::signbit(back.parameters().shared[0].weight(0, 0)));
    EXPECT_EQ(back.config().pool_coarse, cfg.pool_coarse);
    EXPECT_EQ(back.config().coarse_dim, 4);
    EXPECT_EQ(back.config().fusion, Fusion::Concat);
    fs::remove(path);
}

TEST(Checkpoint, RejectsCorruptFiles) {
    std::istringstream wrong_magic("not-a-checkpoint\n");
    EXPECT_THROW(Archive::read(wrong_magic), ParseError);
    std::istringstream future("dgtl-checkpoint\nformat_version 99\nend\n");
    EXPECT_THROW(Archive::read(future), ParseError);
    std::istringstream truncated("dgtl-checkpoint\nformat_version 1\ntensor w 2 2 0x1p+0 0x1p+0\n");
    EXPECT_THROW(Archive::read(truncated), ParseError);
    EXPECT_THROW(Archive::load("/nonexistent/model.ckpt"), IOError);
}
