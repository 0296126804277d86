#pragma once

#include "avatarfit/body_model.hpp"
#include "avatarfit/mesh.hpp"

#include <vector>

namespace avatarfit {

/// One round of the lite-model derivation: delete, re-face, flatten.
struct TransferSpec {
  std::vector<int> delete_ids;
  /// Vertex sets in post-deletion indexing.
  std::vector<std::vector<int>> flatten_regions;
  int flatten_iterations = 10;
  double flatten_step = 0.5;
};

struct DeletionResult {
  TriMesh mesh;
  /// old index -> new index, -1 for deleted vertices.
  std::vector<int> old_to_new;
  /// For each surviving face, its index in the input mesh.
  std::vector<int> kept_faces;
};

/// Removes `delete_ids` and every face touching them. Survivors keep their
/// relative order. Throws EmptyResult if nothing survives.
DeletionResult delete_vertices(const TriMesh& mesh, const std::vector<int>& delete_ids);

struct FillResult {
  TriMesh mesh;
  int loops_filled = 0;
  /// Ids of appended faces. Their UVs reuse a neighbouring face's UV index
  /// per corner and are not a proper layout.
  std::vector<int> new_faces;
};

/// Boundary cycles as vertex sequences, oriented the way fill faces wind.
std::vector<std::vector<int>> boundary_loops(const TriMesh& mesh);

/// Triangulates every boundary loop (fan, falling back to ear clipping).
/// Existing vertices and faces are left untouched; new faces are appended.
FillResult fill_boundary_loops(const TriMesh& mesh);

/// Umbrella Laplacian smoothing of the region interior; region vertices with
/// a neighbour outside the region, or on an open boundary, stay fixed.
TriMesh flatten_region(const TriMesh& mesh, const std::vector<int>& region, int iterations, double step);

struct VertexCorrespondence {
  std::vector<int> lite_to_source;
  std::vector<int> source_to_lite;
};

VertexCorrespondence build_correspondence(const Points& source_template, const Points& lite_template);

/// Builds the lite model: row-copied shape/expression/pose/skinning
/// coefficients from each lite vertex's nearest source vertex, and a joint
/// regressor aggregated over source vertices mapped to each lite vertex.
ParametricModel transfer_coefficients(const ParametricModel& source, const TriMesh& lite_mesh,
                                      const VertexCorrespondence& corr);

struct TransferResult {
  ParametricModel model;
  TriMesh lite_mesh;
  VertexCorrespondence correspondence;
  std::vector<int> filled_faces;
};

/// Applies each spec round in order to the source template, then transfers
/// all coefficients onto the resulting mesh.
TransferResult run_transfer(const ParametricModel& source, const std::vector<TransferSpec>& rounds);

}  // namespace avatarfit
