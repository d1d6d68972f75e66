// SPDX-License-Identifier: Apache-2.0
#include "wwbl/caption_cluster.hpp"

#include <algorithm>
#include <string>

namespace wwbl {

void ClusterConfig::validate() const {
  if (!(similarity_threshold > 0.0 && similarity_threshold < 1.0))
    raise(ErrorCode::ConfigError, "cluster.threshold must be in (0,1)");
  if (min_cluster_size < 1) raise(ErrorCode::ConfigError, "cluster.min_size must be >= 1");
}

std::vector<CaptionCluster> cluster_captions(std::span<const Phrase> captions,
                                             std::span<const TextEmbedding> embeddings,
                                             const ClusterConfig& cfg) {
  cfg.validate();
  if (captions.size() != embeddings.size())
    raise(ErrorCode::DimensionMismatch, std::to_string(captions.size()) + " captions but " +
                                            std::to_string(embeddings.size()) + " embeddings");
  const int n = static_cast<int>(captions.size());
  std::vector<double> sim(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      const double s = cosine(embeddings[i], embeddings[j]);
      sim[static_cast<std::size_t>(i) * n + j] = s;
      sim[static_cast<std::size_t>(j) * n + i] = s;
    }
  auto S = [&](int i, int j) { return sim[static_cast<std::size_t>(i) * n + j]; };

  struct Candidate {
    int seed;
    std::vector<int> members;
  };
  std::vector<Candidate> candidates;
  for (int i = 0; i < n; ++i) {
    Candidate c{i, {}};
    for (int j = 0; j < n; ++j)
      if (S(i, j) >= cfg.similarity_threshold) c.members.push_back(j);
    if (static_cast<int>(c.members.size()) >= cfg.min_cluster_size) candidates.push_back(std::move(c));
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return a.members.size() > b.members.size();
  });

  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  std::vector<CaptionCluster> out;
  for (const auto& c : candidates) {
    std::vector<int> members;
    for (int m : c.members)
      if (!taken[static_cast<std::size_t>(m)]) members.push_back(m);
    if (static_cast<int>(members.size()) < cfg.min_cluster_size) continue;
    for (int m : members) taken[static_cast<std::size_t>(m)] = 1;

    int rep = members.front();
    double best = -1e300;
    for (int m : members) {
      double total = 0.0;
      for (int k : members) total += S(m, k);
      if (total > best) {
        best = total;
        rep = m;
      }
    }
    out.push_back({captions[rep], embeddings[rep], std::move(members), c.seed});
  }
  return out;
}

}  // namespace wwbl
