"""Patient records, cohort files and the synthetic cohort generator"""
