#include <stdio.h>
#include <string.h>
#include "discourse.h"

#define CHECK(cond)                                                     \
    do {                                                                \
        if (!(cond)) {                                                  \
            const char *err = dsc_last_error();                         \
            fprintf(stderr, "line %d: %s (%s)\n", __LINE__, #cond,      \
                    err ? err : "no error");                            \
            return 1;                                                   \
        }                                                               \
    } while (0)

int main(int argc, char **argv) {
    CHECK(argc == 2);
    char *tokens = NULL;
    CHECK(dsc_tokenize_json("I can't sleep.", &tokens) == DSC_STATUS_OK);
    CHECK(strcmp(tokens, "[\"i\",\"can't\",\"sleep\"]") == 0);
    dsc_string_free(tokens);

    DscCorpus *corpus = NULL;
    CHECK(dsc_corpus_load("/nonexistent/corpus.jsonl", &corpus) == DSC_STATUS_IO);
    CHECK(dsc_last_error() != NULL);
    CHECK(dsc_corpus_load(argv[1], &corpus) == DSC_STATUS_OK);
    CHECK(dsc_corpus_len(corpus) == 200);

    DscStageModel *model = NULL;
    double loglik = 0.0;
    CHECK(dsc_stage_model_fit(corpus, 3, 5, 20, 1e-4, &model, &loglik) == DSC_STATUS_OK);
    CHECK(loglik < 0.0);
    CHECK(dsc_stage_model_stages(model) == 3);

    char *paths = NULL;
    CHECK(dsc_decode_json(model, corpus, &paths) == DSC_STATUS_OK);
    CHECK(paths[0] == '{');
    dsc_string_free(paths);

    double c = 0.0;
    CHECK(dsc_coordination(corpus, DSC_ROLE_TEXTER, &c) == DSC_STATUS_OK);
    CHECK(c > -1.0 && c < 1.0);

    double xs[] = {1, 2}, ys[] = {3, 4}, u = -1, p = -1;
    CHECK(dsc_mann_whitney(xs, 2, ys, 2, &u, &p) == DSC_STATUS_OK);
    CHECK(u == 0.0 && p > 0.333 && p < 0.334);

    double scores[] = {0.9, 0.4, 0.6}, auc = 0;
    unsigned char labels[] = {1, 1, 0};
    CHECK(dsc_auc(scores, labels, 3, &auc) == DSC_STATUS_OK);
    CHECK(auc == 0.5);
    CHECK(dsc_auc(scores, labels, 1, &auc) == DSC_STATUS_INSUFFICIENT_DATA);

    dsc_stage_model_free(model);
    dsc_corpus_free(corpus);
    printf("ok %s\n", dsc_version());
    return 0;
}
