"""Translation model variants; ``models.registry.build_model`` builds one by name."""
