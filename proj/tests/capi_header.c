/* The public header must compile as C. */
#include <stdio.h>

#include "stbs/stbs.h"

int main(void) {
  stbs_config* config = NULL;
  if (stbs_config_new(&config) != STBS_OK) return 1;
  stbs_status st = stbs_config_set(config, "num_topics", "3");
  stbs_config_free(config);
  printf("stbs %s: %s\n", stbs_version(), stbs_status_name(st));
  return st == STBS_OK ? 0 : 1;
}
