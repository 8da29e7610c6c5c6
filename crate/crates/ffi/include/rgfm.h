#ifndef RGFM_H
#define RGFM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RgfmStatus {
  RGFM_STATUS_OK = 0,
  RGFM_STATUS_NULL_POINTER = 1,
  RGFM_STATUS_INVALID_ARGUMENT = 2,
  RGFM_STATUS_IO = 3,
  RGFM_STATUS_DIMENSION = 4,
  RGFM_STATUS_NUMERIC = 5,
  RGFM_STATUS_CHECKPOINT = 6,
  RGFM_STATUS_BUFFER_TOO_SMALL = 7,
  RGFM_STATUS_PANIC = 8,
} RgfmStatus;

// Opaque checkpoint handle.
typedef struct RgfmCheckpoint RgfmCheckpoint;

// Opaque embedding table handle.
typedef struct RgfmEmbedding RgfmEmbedding;

// Opaque graph handle.
typedef struct RgfmGraph RgfmGraph;

// Options for [`rgfm_train`]. Fill with [`rgfm_train_options_default`]
// and override fields as needed.
typedef struct RgfmTrainOptions {
  // Dimension of both factors.
  size_t dim;
  size_t layers;
  size_t hidden;
  size_t epochs;
  size_t batch_size;
  double learning_rate;
  double dropout;
  double temperature;
  uint64_t seed;
} RgfmTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next failing call on the same thread.
const char *rgfm_last_error(void);

// Library version as a static NUL-terminated string.
const char *rgfm_version(void);

// Builds a graph from `num_edges` pairs stored flat in `edges`
// (`u0, v0, u1, v1, ...`).
enum RgfmStatus rgfm_graph_from_edges(size_t num_nodes,
                                      const size_t *edges,
                                      size_t num_edges,
                                      struct RgfmGraph **out);

// Reads a whitespace-separated edge list.
enum RgfmStatus rgfm_graph_load(const char *path, struct RgfmGraph **out);

size_t rgfm_graph_num_nodes(const struct RgfmGraph *graph);

size_t rgfm_graph_num_edges(const struct RgfmGraph *graph);

void rgfm_graph_free(struct RgfmGraph *graph);

// Writes the default training options into `out`.
enum RgfmStatus rgfm_train_options_default(struct RgfmTrainOptions *out);

// Pretrains on `graph`. If `trace` is not NULL it must hold at least
// `options->epochs` doubles and receives the mean loss of each epoch.
enum RgfmStatus rgfm_train(const struct RgfmGraph *graph,
                           const struct RgfmTrainOptions *options,
                           double *trace,
                           struct RgfmCheckpoint **out);

enum RgfmStatus rgfm_checkpoint_load(const char *path, struct RgfmCheckpoint **out);

enum RgfmStatus rgfm_checkpoint_save(const struct RgfmCheckpoint *ckpt, const char *path);

void rgfm_checkpoint_free(struct RgfmCheckpoint *ckpt);

// Embeds every node of `graph` with the checkpoint's parameters.
enum RgfmStatus rgfm_embed(const struct RgfmGraph *graph,
                           const struct RgfmCheckpoint *ckpt,
                           struct RgfmEmbedding **out);

// Row and column counts of an embedding table.
enum RgfmStatus rgfm_embedding_shape(const struct RgfmEmbedding *emb, size_t *rows, size_t *cols);

// Copies the table row-major into `buf`, which holds `len` doubles.
enum RgfmStatus rgfm_embedding_copy(const struct RgfmEmbedding *emb, double *buf, size_t len);

void rgfm_embedding_free(struct RgfmEmbedding *emb);

// Link-prediction AUC and AP: `holdout` of the edges are hidden, the
// checkpoint embeds the remaining graph, and held-out edges are ranked
// against as many sampled non-edges by embedding dot product.
enum RgfmStatus rgfm_link_eval(const struct RgfmGraph *graph,
                               const struct RgfmCheckpoint *ckpt,
                               double holdout,
                               uint64_t seed,
                               double *auc,
                               double *ap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RGFM_H */
