// Writes the synthetic EMB1 fixtures used by the CLI tests and the acceptance suite.
//
//   make_fixtures <out-dir>
//
// id_cluster.emb  2000 x 16, isotropic Gaussian (sigma 1) around 10 * e1
// id_test.emb     1000 x 16, same distribution, independent draws
// ood_rot60.emb   1000 x 16, same spread around the center rotated 60 degrees in the e1-e2 plane
// manifest.json   id_test + ood_rot60 (as type "fog") under encoder "latent"
//
// The generator is std::mt19937_64 + std::normal_distribution; the files are committed so
// results do not depend on the standard library that later builds use.

#include <cstdio>
#include <numbers>

#include "../support.hpp"

int main(int argc, char** argv) {
    if (argc != 2) {
        std::fprintf(stderr, "usage: make_fixtures <out-dir>\n");
        return 2;
    }
    namespace fs = std::filesystem;
    using ood::testing::gaussian_cluster;
    using ood::testing::planar_direction;

    const fs::path dir = argv[1];
    fs::create_directories(dir);
    constexpr std::size_t dim = 16;
    const auto center = planar_direction(dim, 10.0, 0.0);
    const auto rotated = planar_direction(dim, 10.0, std::numbers::pi / 3.0);

    ood::write_embedding_file(gaussian_cluster(2000, center, 1.0, 101), dir / "id_cluster.emb");
    ood::write_embedding_file(gaussian_cluster(1000, center, 1.0, 202), dir / "id_test.emb");
    ood::write_embedding_file(gaussian_cluster(1000, rotated, 1.0, 303), dir / "ood_rot60.emb");

    ood::DatasetManifest manifest;
    manifest.entries = {{"id_test.emb", ood::Role::Id, "", "latent"},
                        {"ood_rot60.emb", ood::Role::Ood, "fog", "latent"}};
    ood::write_manifest(manifest, dir / "manifest.json");
    return 0;
}
